import numpy as np
import pytest
from numpy.testing import assert_allclose

from krongp import KernelSpec, equicorrelation, sample_composite_prior, transfer_table
from krongp.errors import ParameterError, ShapeError


class TestEquicorrelation:
    def test_structure(self):
        A = equicorrelation(3, 0.4)
        assert_allclose(np.diag(A), 1.0)
        off = A[~np.eye(3, dtype=bool)]
        assert_allclose(off, 0.4)

    def test_positive_semidefinite_across_range(self):
        for c in [0.0, 0.3, 0.9, 1.0]:
            eigs = np.linalg.eigvalsh(equicorrelation(4, c))
            assert eigs.min() >= -1e-12

    def test_range_check(self):
        with pytest.raises(ParameterError):
            equicorrelation(2, -0.1)
        with pytest.raises(ParameterError):
            equicorrelation(2, 1.1)


class TestCompositePrior:
    def test_sample_moments_match_prior_covariance(self):
        # empirical covariance of many draws approaches the constructed one
        rng = np.random.default_rng(0)
        X = rng.uniform(0, 1, size=(4, 2))
        P = equicorrelation(2, 0.8)
        Q = 0.25 * np.eye(2)
        k1, k2 = KernelSpec.se(), KernelSpec.nn()
        from krongp import kernel_matrix
        want = (np.kron(P, kernel_matrix(k1, X, X))
                + np.kron(Q, kernel_matrix(k2, X, X))
                + 0.05 ** 2 * np.eye(8))
        draws = np.empty((4000, 8))
        for s in range(4000):
            Y = sample_composite_prior(X, P, Q, k1, k2, 0.05,
                                       np.random.default_rng(s))
            draws[s] = Y.T.ravel()  # task-major to match the kron layout
        got = np.cov(draws.T, bias=True)
        assert np.abs(got - want).max() < 0.15

    def test_deterministic_given_rng_seed(self):
        X = np.random.default_rng(1).uniform(size=(5, 3))
        P = equicorrelation(2, 0.5)
        a = sample_composite_prior(X, P, P, KernelSpec.se(), KernelSpec.nn(),
                                   0.1, np.random.default_rng(42))
        b = sample_composite_prior(X, P, P, KernelSpec.se(), KernelSpec.nn(),
                                   0.1, np.random.default_rng(42))
        assert np.array_equal(a, b)

    def test_per_task_noise_vector(self):
        X = np.zeros((200, 1))  # degenerate inputs: latent constant per task
        P = np.eye(2) * 1e-12
        Y = sample_composite_prior(X, P, P, KernelSpec.se(), KernelSpec.se(),
                                   [0.1, 2.0], np.random.default_rng(3))
        assert Y[:, 0].std() < 0.5
        assert Y[:, 1].std() > 1.0

    def test_shape_validation(self):
        with pytest.raises(ShapeError):
            sample_composite_prior(np.zeros((3, 1)), np.eye(2), np.eye(3),
                                   KernelSpec.se(), KernelSpec.se(), 0.1,
                                   np.random.default_rng(0))


class TestTransferTable:
    def test_shapes_and_label_pattern(self):
        table = transfer_table(num_rows=30, num_primary=5, num_tasks=3,
                               num_bands=6, seed=2)
        assert table.reflectance.shape == (30, 6)
        assert table.task_names == ("primary", "secondary1", "secondary2")
        observed = np.isfinite(table.targets)
        assert observed[:, 0].sum() == 5
        assert observed[:, 1:].all()

    def test_two_task_names(self):
        table = transfer_table(num_rows=12, num_primary=4, seed=0)
        assert table.task_names == ("primary", "secondary")

    def test_wavelength_grid(self):
        table = transfer_table(num_rows=10, num_primary=3, num_bands=5, seed=0)
        assert table.wavelengths.tolist() == [400.0, 410.0, 420.0, 430.0, 440.0]

    def test_deterministic(self):
        a = transfer_table(num_rows=15, num_primary=4, seed=9)
        b = transfer_table(num_rows=15, num_primary=4, seed=9)
        assert np.array_equal(a.reflectance, b.reflectance)
        assert np.array_equal(a.targets, b.targets, equal_nan=True)

    def test_tasks_actually_correlated(self):
        # hidden-primary rows removed; compare observed primary to secondary
        table = transfer_table(num_rows=400, num_primary=400, correlation=0.95,
                               noise_std=0.01, seed=5)
        r = np.corrcoef(table.targets[:, 0], table.targets[:, 1])[0, 1]
        assert r > 0.7

    def test_argument_validation(self):
        with pytest.raises(ParameterError):
            transfer_table(num_rows=10, num_primary=2)
        with pytest.raises(ParameterError):
            transfer_table(num_rows=10, num_primary=11)
        with pytest.raises(ParameterError):
            transfer_table(num_tasks=0)
