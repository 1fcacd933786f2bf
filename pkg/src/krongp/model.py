"""Generalized multitask GP over observed (input, task) pairs.

The joint covariance is a sum of Kronecker terms plus a noise term,

    Sigma = sum_j  A_j (x) K_j   +   Omega (x) I   +   D (x) I,

restricted to the rows/columns of the observed pairs.  Each ``A_j`` is a
PSD task matrix, ``K_j`` the Gram matrix of that term's kernel over the
distinct inputs, ``Omega`` an optional structured-noise task matrix, and
``D = diag(exp(task_noise_log))`` the per-task noise variances.  Restricting
to observed pairs rather than imputing keeps the likelihood exact when the
input x task grid has holes, which is the whole point of the transfer
setting (scarce primary-task labels, plentiful secondary ones).

All four named methods are configurations of this one model:

    single-task GP   one task, one term, diagonal noise
    shared-cov MTGP  one term, diagonal noise
    structured-noise one term, noise matrix with rank > 0
    composite MTGP   two terms, diagonal noise

The diagonal of the noise covariance always comes from ``task_noise_log``;
the structured-noise matrix carries only the low-rank coupling (its ``a0``
is pinned to zero), so a rank-0 noise matrix contributes nothing and the
structured-noise model reduces exactly to the shared-covariance one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.linalg.lapack import dpotrf

from .errors import DataError, NumericalError, ParameterError, ShapeError
from .kernels import KernelSpec, kernel_diag, kernel_grad, kernel_matrix
from .optimize import MultiRestartResult, OptimizerSettings, multi_restart_minimize
from .taskcorr import TaskCorrMatrix

LOG_2PI = math.log(2.0 * math.pi)
NOISE_FLOOR_LOG = math.log(1e-8)

# bounded, deterministic recovery from marginal indefiniteness
_JITTERS = (0.0, 1e-8, 1e-6)


# ---------------------------------------------------------------------------
# observations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObservationSet:
    """Targets for the observed subset of the inputs x tasks grid.

    ``X`` holds the N distinct inputs; ``input_idx``, ``task_idx`` and ``y``
    are parallel arrays with one entry per observed pair.  The full grid
    need not be present.
    """

    X: np.ndarray
    num_tasks: int
    input_idx: np.ndarray
    task_idx: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ShapeError(f"X must be 2-d, got shape {X.shape}")
        ii = np.asarray(self.input_idx, dtype=int).ravel()
        tt = np.asarray(self.task_idx, dtype=int).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        if not (ii.shape == tt.shape == y.shape):
            raise ShapeError("input_idx, task_idx and y must have equal length")
        if self.num_tasks < 1:
            raise DataError(f"num_tasks must be >= 1, got {self.num_tasks}")
        if ii.size:
            if ii.min() < 0 or ii.max() >= X.shape[0]:
                raise DataError("input index out of range")
            if tt.min() < 0 or tt.max() >= self.num_tasks:
                raise DataError("task index out of range")
            flat = ii * self.num_tasks + tt
            if np.unique(flat).size != flat.size:
                raise DataError("duplicate (input, task) pairs")
        if not np.all(np.isfinite(y)):
            raise DataError("non-finite target values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "input_idx", ii)
        object.__setattr__(self, "task_idx", tt)
        object.__setattr__(self, "y", y)

    @property
    def n_obs(self) -> int:
        return self.y.shape[0]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_pairs(cls, X, num_tasks, pairs) -> "ObservationSet":
        """Build from an iterable of (input_index, task_index, target) triples."""
        pairs = list(pairs)
        ii = [p[0] for p in pairs]
        tt = [p[1] for p in pairs]
        y = [p[2] for p in pairs]
        return cls(np.asarray(X, dtype=float), num_tasks,
                   np.asarray(ii, dtype=int), np.asarray(tt, dtype=int),
                   np.asarray(y, dtype=float))

    @classmethod
    def from_grid(cls, X, Y) -> "ObservationSet":
        """Build from an N x M target matrix; NaN entries mean unobserved."""
        Y = np.asarray(Y, dtype=float)
        if Y.ndim != 2:
            raise ShapeError(f"Y must be 2-d, got shape {Y.shape}")
        ii, tt = np.nonzero(np.isfinite(Y))
        return cls(np.asarray(X, dtype=float), Y.shape[1], ii, tt, Y[ii, tt])

    def subset(self, indices) -> "ObservationSet":
        """Same inputs, only the selected observations."""
        idx = np.asarray(indices, dtype=int)
        return ObservationSet(self.X, self.num_tasks,
                              self.input_idx[idx], self.task_idx[idx], self.y[idx])

    def with_targets(self, y) -> "ObservationSet":
        return ObservationSet(self.X, self.num_tasks,
                              self.input_idx, self.task_idx, np.asarray(y, dtype=float))


# ---------------------------------------------------------------------------
# model configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    """Ordered Kronecker terms plus a noise term.

    Free parameters, in the fixed flattening order used by ``pack`` /
    ``with_parameters``, gradients and serialization:

        per term:  task-matrix a0, task-matrix B (column-major),
                   kernel log-hyperparameters (kernel order)
        then:      noise-matrix B (column-major; empty when rank 0)
        then:      task_noise_log (one entry per task)
    """

    terms: tuple
    noise_corr: TaskCorrMatrix
    task_noise_log: np.ndarray
    label: str = ""

    def __post_init__(self):
        terms = tuple((tc, spec) for tc, spec in self.terms)
        if not terms:
            raise ParameterError("a model needs at least one Kronecker term")
        M = terms[0][0].num_tasks
        for tc, spec in terms:
            if not isinstance(tc, TaskCorrMatrix) or not isinstance(spec, KernelSpec):
                raise ParameterError("terms must be (TaskCorrMatrix, KernelSpec) pairs")
            if tc.num_tasks != M:
                raise ShapeError("all task matrices must share num_tasks")
        if self.noise_corr.num_tasks != M:
            raise ShapeError("noise matrix num_tasks mismatch")
        if self.noise_corr.a0 != 0.0:
            raise ParameterError("the noise matrix a0 is fixed at 0; its diagonal "
                                 "comes from task_noise_log")
        tnl = np.asarray(self.task_noise_log, dtype=float).ravel()
        if tnl.shape[0] != M:
            raise ShapeError(f"task_noise_log must have length {M}, got {tnl.shape[0]}")
        if not np.all(np.isfinite(tnl)):
            raise ParameterError("non-finite task_noise_log")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "task_noise_log", tnl)

    @property
    def num_tasks(self) -> int:
        return self.terms[0][0].num_tasks

    @property
    def num_params(self) -> int:
        n = sum(tc.num_params + spec.num_hypers for tc, spec in self.terms)
        return n + self.noise_corr.num_params - 1 + self.num_tasks

    def pack(self) -> np.ndarray:
        """Current parameter values in the fixed flattening order."""
        parts = []
        for tc, spec in self.terms:
            parts.append(tc.flat_params())
            parts.append(spec.log_hypers)
        parts.append(self.noise_corr.flat_params()[1:])  # a0 pinned at 0
        parts.append(self.task_noise_log)
        return np.concatenate(parts)

    def with_parameters(self, theta) -> "ModelConfig":
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.shape[0] != self.num_params:
            raise ShapeError(f"expected {self.num_params} parameters, got {theta.shape[0]}")
        pos = 0
        terms = []
        for tc, spec in self.terms:
            k = tc.num_params
            terms.append((tc.with_flat_params(theta[pos:pos + k]),
                          spec.with_log_hypers(theta[pos + k:pos + k + spec.num_hypers])))
            pos += k + spec.num_hypers
        k = self.noise_corr.num_params - 1
        noise = self.noise_corr.with_flat_params(np.concatenate(([0.0], theta[pos:pos + k])))
        pos += k
        tnl = theta[pos:pos + self.num_tasks]
        return replace(self, terms=tuple(terms), noise_corr=noise, task_noise_log=tnl)

    def param_names(self) -> list:
        names = []
        for j, (tc, spec) in enumerate(self.terms):
            names.append(f"term{j}.a0")
            names += [f"term{j}.B[{m},{c}]" for c in range(tc.rank) for m in range(tc.num_tasks)]
            names += [f"term{j}.{h}" for h in spec.hyper_names]
        names += [f"noise.B[{m},{c}]" for c in range(self.noise_corr.rank)
                  for m in range(self.num_tasks)]
        names += [f"log_noise_var[{l}]" for l in range(self.num_tasks)]
        return names

    def noise_param_mask(self) -> np.ndarray:
        """Boolean mask over the flattened parameters marking task_noise_log."""
        mask = np.zeros(self.num_params, dtype=bool)
        mask[self.num_params - self.num_tasks:] = True
        return mask


def gp_config(kernel: KernelSpec) -> ModelConfig:
    """Single-task GP: one task, one term, diagonal noise."""
    return ModelConfig(terms=((TaskCorrMatrix.identity(1), kernel),),
                       noise_corr=TaskCorrMatrix.zero(1),
                       task_noise_log=np.log([0.1]),
                       label=f"GP ({kernel.kind.upper()})")


def mtgp_sc_config(num_tasks: int, kernel: KernelSpec, rank: int = 1) -> ModelConfig:
    """Shared-covariance multitask GP: one term, diagonal noise."""
    return ModelConfig(terms=((TaskCorrMatrix.identity(num_tasks, rank), kernel),),
                       noise_corr=TaskCorrMatrix.zero(num_tasks),
                       task_noise_log=np.full(num_tasks, np.log(0.1)),
                       label=f"MTGP-SC ({kernel.kind.upper()})")


def mtgp_sn_config(num_tasks: int, kernel: KernelSpec, rank: int = 1,
                   noise_rank: int = 1) -> ModelConfig:
    """Structured-noise multitask GP: one term plus a coupled noise matrix."""
    return ModelConfig(terms=((TaskCorrMatrix.identity(num_tasks, rank), kernel),),
                       noise_corr=TaskCorrMatrix.zero(num_tasks, noise_rank),
                       task_noise_log=np.full(num_tasks, np.log(0.1)),
                       label=f"MTGP-SN ({kernel.kind.upper()})")


def mtgp_comp_config(num_tasks: int, kernel1: KernelSpec, kernel2: KernelSpec,
                     rank1: int = 1, rank2: int = 1) -> ModelConfig:
    """Composite-covariance multitask GP: two Kronecker terms, diagonal noise."""
    return ModelConfig(terms=((TaskCorrMatrix.identity(num_tasks, rank1), kernel1),
                              (TaskCorrMatrix.identity(num_tasks, rank2), kernel2)),
                       noise_corr=TaskCorrMatrix.zero(num_tasks),
                       task_noise_log=np.full(num_tasks, np.log(0.1)),
                       label=f"MTGP-COMP ({kernel1.kind.upper()}, {kernel2.kind.upper()})")


# ---------------------------------------------------------------------------
# covariance assembly and marginal likelihood
# ---------------------------------------------------------------------------


def _check_compatible(config: ModelConfig, data: ObservationSet):
    if config.num_tasks != data.num_tasks:
        raise ShapeError(f"model has {config.num_tasks} tasks, data has {data.num_tasks}")
    if data.n_obs < 1:
        raise DataError("need at least one observation")


def assemble_sigma(config: ModelConfig, data: ObservationSet) -> np.ndarray:
    """Covariance of the observed targets, restricted to observed pairs."""
    _check_compatible(config, data)
    ii, tt = data.input_idx, data.task_idx
    II = (ii[:, None], ii[None, :])
    TT = (tt[:, None], tt[None, :])
    sigma = np.zeros((data.n_obs, data.n_obs))
    for tc, spec in config.terms:
        K = kernel_matrix(spec, data.X, data.X)
        sigma += tc.materialize()[TT] * K[II]
    if config.noise_corr.rank > 0:
        same_input = ii[:, None] == ii[None, :]
        sigma += np.where(same_input, config.noise_corr.materialize()[TT], 0.0)
    sigma[np.diag_indices_from(sigma)] += np.exp(config.task_noise_log)[tt]
    return sigma


def _chol_with_jitter(sigma: np.ndarray):
    """Lower Cholesky factor, retrying with small diagonal jitter."""
    last_info = 0
    for jit in _JITTERS:
        mat = sigma if jit == 0.0 else sigma + jit * np.eye(sigma.shape[0])
        c, info = dpotrf(mat, lower=1, clean=0, overwrite_a=0)
        if info == 0:
            return c, jit
        last_info = int(info)
    raise NumericalError(
        f"covariance factorization failed at pivot {last_info} "
        f"(jitter up to {_JITTERS[-1]:g} did not help)", pivot=last_info)


def _likelihood_pieces(config: ModelConfig, data: ObservationSet):
    sigma = assemble_sigma(config, data)
    L, _ = _chol_with_jitter(sigma)
    alpha = cho_solve((L, True), data.y)
    value = 0.5 * float(data.y @ alpha) \
        + float(np.sum(np.log(np.diag(L)))) \
        + 0.5 * data.n_obs * LOG_2PI
    return L, alpha, value


def negative_log_marginal_likelihood(config: ModelConfig, data: ObservationSet) -> float:
    """0.5 y' Sigma^-1 y + 0.5 log|Sigma| + (n/2) log 2pi."""
    return _likelihood_pieces(config, data)[2]


def nlml_value_and_gradient(config: ModelConfig, data: ObservationSet):
    """NLML and its gradient w.r.t. the flattened parameter vector.

    Uses d(NLML)/d(theta) = 0.5 tr((Sigma^-1 - alpha alpha') dSigma/dtheta)
    with alpha = Sigma^-1 y; one pass builds each dSigma restricted to the
    observed pairs.
    """
    L, alpha, value = _likelihood_pieces(config, data)
    n = data.n_obs
    sigma_inv = cho_solve((L, True), np.eye(n))
    W = sigma_inv - np.outer(alpha, alpha)
    ii, tt = data.input_idx, data.task_idx
    II = (ii[:, None], ii[None, :])
    TT = (tt[:, None], tt[None, :])

    grads = []
    for tc, spec in config.terms:
        K = kernel_matrix(spec, data.X, data.X)
        K_obs = K[II]
        A_obs = tc.materialize()[TT]
        for dA in tc.grads():
            grads.append(0.5 * float(np.sum(W * (dA[TT] * K_obs))))
        for dK in kernel_grad(spec, data.X):
            grads.append(0.5 * float(np.sum(W * (A_obs * dK[II]))))
    if config.noise_corr.rank > 0:
        same_input = ii[:, None] == ii[None, :]
        for dOmega in config.noise_corr.grads()[1:]:  # a0 pinned, not a parameter
            grads.append(0.5 * float(np.sum(W * np.where(same_input, dOmega[TT], 0.0))))
    sig2 = np.exp(config.task_noise_log)
    diag_W = np.diag(W)
    for l in range(config.num_tasks):
        grads.append(0.5 * float(np.sum(diag_W[tt == l])) * sig2[l])
    return value, np.asarray(grads)


def nlml_gradient(config: ModelConfig, data: ObservationSet) -> np.ndarray:
    return nlml_value_and_gradient(config, data)[1]


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FittedModel:
    """A ModelConfig bound to its training data with a cached factorization."""

    config: ModelConfig
    training_obs: ObservationSet
    chol_lower: np.ndarray
    alpha: np.ndarray
    fit_info: MultiRestartResult = field(default=None, compare=False, repr=False)

    @classmethod
    def from_config(cls, config: ModelConfig, data: ObservationSet,
                    fit_info=None) -> "FittedModel":
        """Condition the given (already-parameterized) model on data."""
        _check_compatible(config, data)
        sigma = assemble_sigma(config, data)
        L, _ = _chol_with_jitter(sigma)
        alpha = cho_solve((L, True), data.y)
        return cls(config=config, training_obs=data, chol_lower=L, alpha=alpha,
                   fit_info=fit_info)


def _init_sampler_for(config: ModelConfig):
    """Random starting points: task matrices near identity, kernel hypers
    log-uniform in [0.1, 10], noise variances log-uniform in [1e-2, 1]."""

    def sample(rng):
        parts = []
        for tc, spec in config.terms:
            draw = TaskCorrMatrix.random_init(tc.num_tasks, tc.rank, rng)
            parts.append(draw.flat_params())
            parts.append(rng.uniform(np.log(0.1), np.log(10.0), size=spec.num_hypers))
        parts.append(rng.normal(0.0, 0.5, size=(config.noise_corr.num_tasks
                                                * config.noise_corr.rank)))
        parts.append(rng.uniform(np.log(1e-2), np.log(1.0), size=config.num_tasks))
        return np.concatenate(parts)

    return sample


def make_objective(config: ModelConfig, data: ObservationSet):
    """NLML objective over the flattened parameters, safe for line search.

    Noise parameters are clamped at log(1e-8) from below (gradient zero in
    the clamped region); factorization failures yield +inf so the optimizer
    rejects the step.
    """
    noise_mask = config.noise_param_mask()

    def objective(theta):
        theta = np.asarray(theta, dtype=float)
        clamped = theta.copy()
        clamped[noise_mask] = np.maximum(clamped[noise_mask], NOISE_FLOOR_LOG)
        try:
            # line searches probe extreme hyperparameters on purpose;
            # overflow there is normal and resolved by the inf return
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                value, grad = nlml_value_and_gradient(config.with_parameters(clamped),
                                                      data)
        except NumericalError:
            return np.inf, np.zeros_like(theta)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            return np.inf, np.zeros_like(theta)
        grad = grad.copy()
        grad[noise_mask & (theta < NOISE_FLOOR_LOG)] = 0.0
        return value, grad

    return objective


def fit(config: ModelConfig, data: ObservationSet,
        opt: OptimizerSettings = OptimizerSettings()) -> FittedModel:
    """Learn all free parameters by multi-restart quasi-Newton NLML descent.

    Returns the lowest-NLML candidate over ``opt.num_restarts`` runs;
    deterministic given ``opt.seed``.
    """
    _check_compatible(config, data)
    present = np.bincount(data.task_idx, minlength=config.num_tasks)
    if np.any(present == 0):
        missing = int(np.argmin(present))
        raise DataError(f"task {missing} has no observations; every coupled task "
                        "needs at least one")
    result = multi_restart_minimize(make_objective(config, data),
                                    _init_sampler_for(config), opt)
    theta = result.best.x.copy()
    noise_mask = config.noise_param_mask()
    theta[noise_mask] = np.maximum(theta[noise_mask], NOISE_FLOOR_LOG)
    return FittedModel.from_config(config.with_parameters(theta), data, fit_info=result)


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def _cross_covariance(model: FittedModel, Xstar: np.ndarray, task: int) -> np.ndarray:
    data = model.training_obs
    out = np.zeros((Xstar.shape[0], data.n_obs))
    for tc, spec in model.config.terms:
        A = tc.materialize()
        Kx = kernel_matrix(spec, Xstar, data.X)
        out += A[task, data.task_idx][None, :] * Kx[:, data.input_idx]
    return out


def _check_predict_inputs(model: FittedModel, Xstar, task: int) -> np.ndarray:
    Xstar = np.asarray(Xstar, dtype=float)
    if Xstar.ndim == 1:
        Xstar = Xstar[None, :]
    if Xstar.ndim != 2 or Xstar.shape[1] != model.training_obs.input_dim:
        raise ShapeError(f"test inputs must be (n, {model.training_obs.input_dim}), "
                         f"got {Xstar.shape}")
    if not 0 <= task < model.config.num_tasks:
        raise ShapeError(f"task index {task} out of range [0, {model.config.num_tasks})")
    return Xstar


def predict_mean(model: FittedModel, Xstar, task: int) -> np.ndarray:
    """Posterior mean of the latent function for one task at new inputs."""
    Xstar = _check_predict_inputs(model, Xstar, task)
    return _cross_covariance(model, Xstar, task) @ model.alpha


def predict_variance(model: FittedModel, Xstar, task: int,
                     include_noise: bool = False) -> np.ndarray:
    """Posterior variance of the latent function (noise-free by default).

    ``include_noise=True`` adds the learned noise variance of the task,
    giving the predictive variance of a new observation.
    """
    Xstar = _check_predict_inputs(model, Xstar, task)
    prior = np.zeros(Xstar.shape[0])
    for tc, spec in model.config.terms:
        prior += tc.materialize()[task, task] * kernel_diag(spec, Xstar)
    k_cross = _cross_covariance(model, Xstar, task)
    v = solve_triangular(model.chol_lower, k_cross.T, lower=True)
    var = prior - np.sum(v * v, axis=0)
    var = np.where(var > 0.0, var, 0.0)
    if include_noise:
        var = var + np.exp(model.config.task_noise_log[task])
    return var
