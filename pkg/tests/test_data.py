import numpy as np
import pytest
from numpy.testing import assert_allclose

from krongp import (SpectraTable, TargetStandardizer, load_spectra_table,
                    remove_wavelength_ranges, resample, save_spectra_table,
                    split_trial)
from krongp.data import WATER_BANDS, band_keep_mask
from krongp.errors import DataError, ShapeError


def toy_table(n=6, bands=4, tasks=2, seed=0):
    rng = np.random.default_rng(seed)
    wl = 400.0 + 10.0 * np.arange(bands)
    refl = rng.uniform(0.05, 0.9, size=(n, bands))
    targ = rng.normal(size=(n, tasks))
    names = tuple(f"t{k}" for k in range(tasks))
    return SpectraTable(wl, refl, targ, names)


class TestSpectraTable:
    def test_basic_properties(self):
        table = toy_table()
        assert table.num_samples == 6
        assert table.num_tasks == 2
        assert table.task_index("t1") == 1
        with pytest.raises(DataError):
            table.task_index("nope")

    def test_rejects_decreasing_wavelengths(self):
        with pytest.raises(DataError):
            SpectraTable([500.0, 400.0], np.full((1, 2), 0.5),
                         np.zeros((1, 1)), ("n",))

    def test_rejects_out_of_range_reflectance(self):
        with pytest.raises(DataError):
            SpectraTable([400.0], [[1.6]], np.zeros((1, 1)), ("n",))
        with pytest.raises(DataError):
            SpectraTable([400.0], [[-0.2]], np.zeros((1, 1)), ("n",))
        # mild negatives from sensor calibration are allowed
        SpectraTable([400.0], [[-0.04]], np.zeros((1, 1)), ("n",))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ShapeError):
            SpectraTable([400.0, 410.0], np.full((2, 3), 0.5),
                         np.zeros((2, 1)), ("n",))
        with pytest.raises(ShapeError):
            SpectraTable([400.0], np.full((2, 1), 0.5), np.zeros((3, 1)), ("n",))


class TestCsv:
    def test_roundtrip_preserves_everything(self, tmp_path):
        table = toy_table(seed=5)
        table.targets[1, 0] = np.nan
        table.targets[4, 1] = np.nan
        path = tmp_path / "t.csv"
        save_spectra_table(table, path)
        back = load_spectra_table(path)
        assert np.array_equal(back.wavelengths, table.wavelengths)
        assert np.array_equal(back.reflectance, table.reflectance)
        assert np.array_equal(back.targets, table.targets, equal_nan=True)
        assert back.task_names == table.task_names

    def test_empty_cells_become_missing(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("400,410,nitrogen\n0.1,0.2,1.5\n0.3,0.4,\n")
        table = load_spectra_table(path)
        assert table.task_names == ("nitrogen",)
        assert np.isnan(table.targets[1, 0])
        assert table.targets[0, 0] == 1.5

    def test_bad_cell_cites_line(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("400,n\n0.1,1.0\nbroken,2.0\n")
        with pytest.raises(DataError, match="line 3"):
            load_spectra_table(path)

    def test_short_row_cites_line(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("400,410,n\n0.1,0.2\n")
        with pytest.raises(DataError, match="line 2"):
            load_spectra_table(path)

    def test_header_without_tasks(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("400,410\n0.1,0.2\n")
        with pytest.raises(DataError, match="no task columns"):
            load_spectra_table(path)

    def test_header_without_wavelengths(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("a,b\n0.1,0.2\n")
        with pytest.raises(DataError, match="no numeric wavelength"):
            load_spectra_table(path)


class TestBandRemoval:
    def test_water_band_count_on_full_grid(self):
        # 1 nm grid over 350..2050: the two absorption windows cover
        # 111 + 171 bands
        wl = np.arange(350.0, 2051.0)
        keep = band_keep_mask(wl, WATER_BANDS)
        assert keep.size == 1701
        assert (~keep).sum() == 282

    def test_closed_interval_boundaries(self):
        keep = band_keep_mask([1349.0, 1350.0, 1460.0, 1461.0], WATER_BANDS)
        assert keep.tolist() == [True, False, False, True]

    def test_table_filtering(self):
        table = toy_table(bands=6)  # 400..450
        out = remove_wavelength_ranges(table, [(410.0, 430.0)])
        assert out.wavelengths.tolist() == [400.0, 440.0, 450.0]
        assert out.reflectance.shape == (6, 3)
        assert np.array_equal(out.targets, table.targets)

    def test_removing_everything_fails(self):
        table = toy_table()
        with pytest.raises(DataError):
            remove_wavelength_ranges(table, [(0.0, 5000.0)])


class TestResample:
    def test_identity_grid(self):
        wl = np.array([400.0, 500.0, 600.0])
        v = np.array([1.0, 4.0, 2.0])
        assert_allclose(resample(wl, v, wl), v, atol=0.0)

    def test_linear_function_is_exact(self):
        wl = np.linspace(400, 700, 13)
        v = 0.002 * wl - 0.1
        dst = np.linspace(410, 690, 29)
        assert_allclose(resample(wl, v, dst), 0.002 * dst - 0.1, atol=1e-12)

    def test_midpoint_average(self):
        out = resample([0.0, 1.0], [2.0, 6.0], [0.5])
        assert_allclose(out, [4.0])

    def test_matrix_rows(self):
        wl = np.array([0.0, 1.0, 2.0])
        V = np.array([[0.0, 1.0, 2.0], [4.0, 2.0, 0.0]])
        out = resample(wl, V, [0.5, 1.5])
        assert_allclose(out, [[0.5, 1.5], [3.0, 1.0]])

    def test_refuses_extrapolation(self):
        with pytest.raises(DataError):
            resample([400.0, 500.0], [1.0, 2.0], [350.0])
        with pytest.raises(DataError):
            resample([400.0, 500.0], [1.0, 2.0], [501.0])


class TestStandardizer:
    def test_fit_and_roundtrip(self):
        rng = np.random.default_rng(10)
        Y = rng.normal(loc=[5.0, -2.0], scale=[3.0, 0.5], size=(200, 2))
        s = TargetStandardizer.fit(Y)
        Z = s.transform(Y)
        assert_allclose(Z.mean(axis=0), 0.0, atol=1e-12)
        assert_allclose(Z.std(axis=0), 1.0, atol=1e-12)
        assert_allclose(s.inverse(Z), Y, atol=1e-12)

    def test_nan_ignored_when_fitting(self):
        Y = np.array([[1.0, np.nan], [3.0, 2.0], [np.nan, 4.0]])
        s = TargetStandardizer.fit(Y)
        assert_allclose(s.mean, [2.0, 3.0])
        assert_allclose(s.std, [1.0, 1.0])

    def test_task_views(self):
        s = TargetStandardizer(mean=np.array([2.0, 0.0]), std=np.array([4.0, 1.0]))
        assert_allclose(s.transform_task([10.0], 0), [2.0])
        assert_allclose(s.inverse_task([2.0], 0), [10.0])

    def test_constant_column_rejected(self):
        with pytest.raises(DataError):
            TargetStandardizer.fit(np.ones((5, 1)))

    def test_all_missing_rejected(self):
        with pytest.raises(DataError):
            TargetStandardizer.fit(np.full((4, 1), np.nan))


class TestSplitTrial:
    def table_with_sparse_primary(self, n=12, n_primary=9, seed=0):
        table = toy_table(n=n, tasks=2, seed=seed)
        targ = table.targets.copy()
        rng = np.random.default_rng(seed + 100)
        unlabeled = rng.permutation(n)[:n - n_primary]
        targ[unlabeled, 0] = np.nan
        return SpectraTable(table.wavelengths, table.reflectance, targ,
                            table.task_names)

    def test_sizes_nine_primary(self):
        table = self.table_with_sparse_primary(n=12, n_primary=9)
        train, test, inner_train, inner_val = split_trial(table, "t0", seed=3)
        assert test.n_obs == 3                        # floor(9 / 3)
        assert train.n_obs == 6 + 12                  # rest of primary + all secondary
        assert inner_train.n_obs + inner_val.n_obs == train.n_obs
        assert inner_val.n_obs == train.n_obs - int(np.floor(0.8 * train.n_obs))

    def test_test_set_is_primary_only_and_disjoint(self):
        table = self.table_with_sparse_primary()
        train, test, _, _ = split_trial(table, "t0", seed=1)
        assert np.all(test.task_idx == 0)
        train_pairs = set(zip(train.input_idx, train.task_idx))
        test_pairs = set(zip(test.input_idx, test.task_idx))
        assert not train_pairs & test_pairs
        observed = np.isfinite(table.targets)
        assert len(train_pairs) + len(test_pairs) == observed.sum()

    def test_secondary_labels_of_test_rows_stay_in_train(self):
        table = self.table_with_sparse_primary()
        train, test, _, _ = split_trial(table, "t0", seed=2)
        train_pairs = set(zip(train.input_idx, train.task_idx))
        for i in test.input_idx:
            assert (i, 1) in train_pairs

    def test_inner_split_partitions_train(self):
        table = self.table_with_sparse_primary()
        train, _, inner_train, inner_val = split_trial(table, "t0", seed=4)
        a = set(zip(inner_train.input_idx, inner_train.task_idx))
        b = set(zip(inner_val.input_idx, inner_val.task_idx))
        assert not a & b
        assert a | b == set(zip(train.input_idx, train.task_idx))

    def test_inner_stratification(self):
        for seed in range(8):
            table = self.table_with_sparse_primary(seed=seed)
            _, _, inner_train, inner_val = split_trial(table, "t0", seed=seed)
            assert set(inner_train.task_idx) == {0, 1}
            assert 0 in inner_val.task_idx

    def test_deterministic(self):
        table = self.table_with_sparse_primary()
        a = split_trial(table, "t0", seed=9)
        b = split_trial(table, "t0", seed=9)
        for u, v in zip(a, b):
            assert np.array_equal(u.input_idx, v.input_idx)
            assert np.array_equal(u.task_idx, v.task_idx)
            assert np.array_equal(u.y, v.y)

    def test_different_seeds_differ(self):
        table = self.table_with_sparse_primary()
        a = split_trial(table, "t0", seed=0)[1]
        differs = any(
            not np.array_equal(split_trial(table, "t0", seed=s)[1].input_idx,
                               a.input_idx)
            for s in range(1, 6))
        assert differs

    def test_raw_targets_passed_through(self):
        table = self.table_with_sparse_primary()
        train, test, _, _ = split_trial(table, "t0", seed=0)
        for obs in (train, test):
            assert_allclose(obs.y, table.targets[obs.input_idx, obs.task_idx])

    def test_accepts_task_index(self):
        table = self.table_with_sparse_primary()
        by_name = split_trial(table, "t0", seed=5)[1]
        by_idx = split_trial(table, 0, seed=5)[1]
        assert np.array_equal(by_name.input_idx, by_idx.input_idx)

    def test_too_few_primary_labels(self):
        table = toy_table(n=4)
        targ = table.targets.copy()
        targ[2:, 0] = np.nan
        table = SpectraTable(table.wavelengths, table.reflectance, targ,
                             table.task_names)
        with pytest.raises(DataError):
            split_trial(table, "t0", seed=0)
