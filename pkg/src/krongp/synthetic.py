"""Synthetic benchmark data drawn from the composite multitask prior.

Real spectra-to-chemistry datasets are not redistributable, so the test
and benchmark tooling samples tasks from the generative model itself:
latent functions with covariance P (x) K1 + Q (x) K2, plus i.i.d. noise.
The transfer setting is reproduced by labelling only a small subset of
rows for the primary task while every row carries secondary labels.
"""

from __future__ import annotations

import numpy as np

from .data import SpectraTable
from .errors import ParameterError, ShapeError
from .kernels import KernelSpec, kernel_matrix


def equicorrelation(num_tasks: int, off_diagonal: float) -> np.ndarray:
    """Unit-diagonal matrix with a common off-diagonal value (PSD for
    off_diagonal in [0, 1])."""
    if not 0.0 <= off_diagonal <= 1.0:
        raise ParameterError(f"off-diagonal correlation must be in [0, 1], "
                             f"got {off_diagonal}")
    A = np.full((num_tasks, num_tasks), off_diagonal)
    np.fill_diagonal(A, 1.0)
    return A


def sample_composite_prior(X, P, Q, kernel1: KernelSpec, kernel2: KernelSpec,
                           noise_std, rng) -> np.ndarray:
    """Draw one N x M table of noisy task observations from the prior.

    ``noise_std`` is a scalar or a length-M vector of per-task standard
    deviations.  The joint latent draw uses the exact dense covariance,
    so this doubles as the generative oracle in tests.
    """
    X = np.asarray(X, dtype=float)
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    M = P.shape[0]
    if P.shape != (M, M) or Q.shape != (M, M):
        raise ShapeError("P and Q must be square with matching size")
    N = X.shape[0]
    K1 = kernel_matrix(kernel1, X, X)
    K2 = kernel_matrix(kernel2, X, X)
    joint = np.kron(P, K1) + np.kron(Q, K2)
    joint[np.diag_indices_from(joint)] += 1e-10
    L = np.linalg.cholesky(joint)
    latent = (L @ rng.standard_normal(M * N)).reshape(M, N).T
    sd = np.broadcast_to(np.asarray(noise_std, dtype=float), (M,))
    return latent + rng.standard_normal((N, M)) * sd[None, :]


def transfer_table(num_rows: int = 100, num_primary: int = 10, num_tasks: int = 2,
                   num_bands: int = 8, correlation: float = 0.9,
                   correlation2: float = None, noise_std: float = 0.1,
                   nn_weight: float = 1.0, seed: int = 0) -> SpectraTable:
    """A labelled spectra table in the scarce-primary transfer regime.

    Inputs are uniform pseudo-reflectance vectors; targets come from a
    two-term prior: an SE component coupled across tasks by
    ``correlation`` and an NN component coupled by ``correlation2``
    (same as ``correlation`` when None; 0 makes the NN component
    task-independent).  ``nn_weight`` sets the NN weight scale; large
    values give that component sharp sigmoidal variation that a single
    smooth kernel cannot absorb.  Task 0 ("primary") keeps labels on
    only ``num_primary`` random rows; the remaining tasks are fully
    labelled.
    """
    if num_tasks < 1:
        raise ParameterError(f"num_tasks must be >= 1, got {num_tasks}")
    if not 3 <= num_primary <= num_rows:
        raise ParameterError(f"num_primary must be in [3, {num_rows}], "
                             f"got {num_primary}")
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, 1.0, size=(num_rows, num_bands))
    wavelengths = 400.0 + 10.0 * np.arange(num_bands)

    # length-scale set so typical pairwise distances stay informative
    k_se = KernelSpec.se(signal=1.0, length_scale=float(np.sqrt(num_bands / 12.0)))
    k_nn = KernelSpec.nn(signal=0.8, weight_scale=float(nn_weight))
    coupling = equicorrelation(num_tasks, correlation)
    coupling2 = (coupling if correlation2 is None
                 else equicorrelation(num_tasks, correlation2))
    targets = sample_composite_prior(X, coupling, coupling2, k_se, k_nn,
                                     noise_std, rng)

    labelled = rng.choice(num_rows, size=num_primary, replace=False)
    hide = np.ones(num_rows, dtype=bool)
    hide[labelled] = False
    targets[hide, 0] = np.nan

    if num_tasks == 2:
        names = ("primary", "secondary")
    else:
        names = ("primary",) + tuple(f"secondary{j}" for j in range(1, num_tasks))
    return SpectraTable(wavelengths, X, targets, names)
