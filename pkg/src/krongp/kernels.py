"""Covariance functions over input vectors (spectra) and their gradients.

Three kinds are supported:

``se``
    Squared exponential, ``sf^2 * exp(-||x - x'||^2 / (2 * ell^2))`` with a
    single isotropic length-scale.
``nn``
    Arcsine neural-network covariance on bias-augmented inputs
    ``xt = (1, x)`` with isotropic weight scale ``sw``:
    ``sf^2 * (2/pi) * asin(2 sw^2 xt.xt' / sqrt((1 + 2 sw^2 xt.xt)(1 + 2 sw^2 xt'.xt')))``.
``sum``
    Pointwise sum of an ``se`` and an ``nn`` kernel.

All hyperparameters are stored in log space, which keeps them positive
without constrained optimization.  The fixed ordering is

    se:  [log sf, log ell]
    nn:  [log sf, log sw]
    sum: [log sf_se, log ell, log sf_nn, log sw]

and is relied upon by model serialization and gradient flattening.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ParameterError, ShapeError

SE = "se"
NN = "nn"
SUM = "sum"

KINDS = (SE, NN, SUM)

HYPER_NAMES = {
    SE: ("log_sf", "log_ell"),
    NN: ("log_sf", "log_sw"),
    SUM: ("log_sf_se", "log_ell", "log_sf_nn", "log_sw"),
}


@dataclass(frozen=True)
class KernelSpec:
    """A covariance function identity plus its log-space hyperparameters."""

    kind: str
    log_hypers: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown kernel kind {self.kind!r}; expected one of {KINDS}")
        hypers = np.asarray(self.log_hypers, dtype=float).ravel()
        if hypers.shape[0] != len(HYPER_NAMES[self.kind]):
            raise ParameterError(
                f"kernel {self.kind!r} takes {len(HYPER_NAMES[self.kind])} "
                f"hyperparameters, got {hypers.shape[0]}"
            )
        if not np.all(np.isfinite(hypers)):
            raise ParameterError(f"non-finite kernel hyperparameters: {hypers}")
        object.__setattr__(self, "log_hypers", hypers)

    @property
    def num_hypers(self) -> int:
        return self.log_hypers.shape[0]

    @property
    def hyper_names(self) -> tuple:
        return HYPER_NAMES[self.kind]

    def with_log_hypers(self, log_hypers) -> "KernelSpec":
        return KernelSpec(self.kind, np.asarray(log_hypers, dtype=float))

    @classmethod
    def se(cls, signal=1.0, length_scale=1.0) -> "KernelSpec":
        return cls(SE, np.log([signal, length_scale]))

    @classmethod
    def nn(cls, signal=1.0, weight_scale=1.0) -> "KernelSpec":
        return cls(NN, np.log([signal, weight_scale]))

    @classmethod
    def sum_of(cls, signal_se=1.0, length_scale=1.0, signal_nn=1.0, weight_scale=1.0) -> "KernelSpec":
        return cls(SUM, np.log([signal_se, length_scale, signal_nn, weight_scale]))

    @classmethod
    def of_kind(cls, kind: str) -> "KernelSpec":
        """Unit-hyperparameter spec of the given kind (all log-hypers zero)."""
        if kind not in KINDS:
            raise ParameterError(f"unknown kernel kind {kind!r}; expected one of {KINDS}")
        return cls(kind, np.zeros(len(HYPER_NAMES[kind])))


def _as_matrix(X, name="X"):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] < 1:
        raise ShapeError(f"{name} must be a 2-d array of row vectors, got shape {X.shape}")
    return np.ascontiguousarray(X)


def _sqdist(X, Xp):
    # direct-difference accumulation stays non-negative; clamp residual
    # cancellation noise anyway
    return np.maximum(cdist(X, Xp, "sqeuclidean"), 0.0)


def _se_matrix(log_sf, log_ell, X, Xp):
    sf2 = np.exp(2.0 * log_sf)
    ell2 = np.exp(2.0 * log_ell)
    return sf2 * np.exp(-0.5 * _sqdist(X, Xp) / ell2)


def _nn_parts(log_sw, X, Xp):
    """Return (z, t1, t2, w) for the arcsine kernel; z is clipped to [-1, 1]."""
    w = np.exp(2.0 * log_sw)
    t1 = 1.0 + np.sum(X * X, axis=1)
    t2 = 1.0 + np.sum(Xp * Xp, axis=1)
    u = 1.0 + X @ Xp.T
    denom = np.sqrt(np.outer(1.0 + 2.0 * w * t1, 1.0 + 2.0 * w * t2))
    z = np.clip(2.0 * w * u / denom, -1.0, 1.0)
    return z, t1, t2, w


def _nn_matrix(log_sf, log_sw, X, Xp):
    sf2 = np.exp(2.0 * log_sf)
    z, _, _, _ = _nn_parts(log_sw, X, Xp)
    return sf2 * (2.0 / np.pi) * np.arcsin(z)


def kernel_matrix(spec: KernelSpec, X, Xp) -> np.ndarray:
    """Pairwise covariance matrix; element (i, j) is k(X[i], Xp[j]).

    Both inputs must share the same column dimension.  The square case
    ``Xp is X`` yields a symmetric positive semi-definite matrix (up to
    roundoff on the order of 1e-10 in the smallest eigenvalue).
    """
    X = _as_matrix(X, "X")
    Xp = _as_matrix(Xp, "Xp")
    if X.shape[1] != Xp.shape[1]:
        raise ShapeError(f"input dimension mismatch: {X.shape[1]} vs {Xp.shape[1]}")
    h = spec.log_hypers
    if spec.kind == SE:
        return _se_matrix(h[0], h[1], X, Xp)
    if spec.kind == NN:
        return _nn_matrix(h[0], h[1], X, Xp)
    return _se_matrix(h[0], h[1], X, Xp) + _nn_matrix(h[2], h[3], X, Xp)


def kernel_eval(spec: KernelSpec, x, xp) -> float:
    """Covariance between two single input vectors."""
    x = np.asarray(x, dtype=float).ravel()
    xp = np.asarray(xp, dtype=float).ravel()
    if x.shape != xp.shape:
        raise ShapeError(f"input dimension mismatch: {x.shape[0]} vs {xp.shape[0]}")
    if x.shape[0] < 1:
        raise ShapeError("inputs must have dimension >= 1")
    return float(kernel_matrix(spec, x[None, :], xp[None, :])[0, 0])


def kernel_diag(spec: KernelSpec, X) -> np.ndarray:
    """Prior variances k(x, x) for each row of X, without the full matrix."""
    X = _as_matrix(X, "X")
    h = spec.log_hypers
    if spec.kind == SE:
        return np.full(X.shape[0], np.exp(2.0 * h[0]))
    if spec.kind == NN:
        return _nn_diag(h[0], h[1], X)
    return np.full(X.shape[0], np.exp(2.0 * h[0])) + _nn_diag(h[2], h[3], X)


def _nn_diag(log_sf, log_sw, X):
    sf2 = np.exp(2.0 * log_sf)
    w = np.exp(2.0 * log_sw)
    t = 1.0 + np.sum(X * X, axis=1)
    z = 2.0 * w * t / (1.0 + 2.0 * w * t)
    return sf2 * (2.0 / np.pi) * np.arcsin(z)


def _se_grads(log_sf, log_ell, X):
    K = _se_matrix(log_sf, log_ell, X, X)
    ell2 = np.exp(2.0 * log_ell)
    return [2.0 * K, K * (_sqdist(X, X) / ell2)]


def _nn_grads(log_sf, log_sw, X):
    sf2 = np.exp(2.0 * log_sf)
    z, t1, t2, w = _nn_parts(log_sw, X, X)
    K = sf2 * (2.0 / np.pi) * np.arcsin(z)
    # d z / d log(sw) = 2 z (1 - w (t1/d1 + t2/d2)); the sqrt floor guards
    # the clipped |z| = 1 corner, unreachable for finite hyperparameters
    d1 = 1.0 + 2.0 * w * t1
    d2 = 1.0 + 2.0 * w * t2
    s = w * (np.add.outer(t1 / d1, t2 / d2))
    dz = 2.0 * z * (1.0 - s)
    dK_sw = sf2 * (2.0 / np.pi) * dz / np.sqrt(np.maximum(1.0 - z * z, 1e-16))
    return [2.0 * K, dK_sw]


def kernel_grad(spec: KernelSpec, X) -> list:
    """Gradient of the square covariance matrix w.r.t. each log-hyperparameter.

    Returns one symmetric matrix per entry of ``spec.log_hypers``, in the
    documented hyperparameter order.
    """
    X = _as_matrix(X, "X")
    if X.shape[0] < 1:
        raise ShapeError("X must be non-empty")
    h = spec.log_hypers
    if spec.kind == SE:
        return _se_grads(h[0], h[1], X)
    if spec.kind == NN:
        return _nn_grads(h[0], h[1], X)
    return _se_grads(h[0], h[1], X) + _nn_grads(h[2], h[3], X)
