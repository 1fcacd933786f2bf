"""Quasi-Newton minimization with deterministic multi-restart.

Limited-memory BFGS (memory 10) with a cubic-interpolation line search
enforcing the strong Wolfe conditions (c1 = 1e-4, c2 = 0.9).  Objectives
return ``(value, gradient)``.  Non-finite values encountered during the
line search are treated as +infinity, so steps into regions where a
covariance factorization fails are simply rejected rather than fatal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FitError, ParameterError

_C1 = 1e-4
_C2 = 0.9
_MEMORY = 10
_MAX_BRACKET = 25
_MAX_ZOOM = 30


@dataclass(frozen=True)
class OptimizerSettings:
    num_restarts: int = 5
    max_iterations: int = 200
    gradient_tolerance: float = 1e-5
    step_tolerance: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if self.num_restarts < 1:
            raise ParameterError(f"num_restarts must be >= 1, got {self.num_restarts}")
        if self.max_iterations < 1:
            raise ParameterError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not (self.gradient_tolerance > 0 and self.step_tolerance > 0):
            raise ParameterError("tolerances must be > 0")


@dataclass
class OptResult:
    """Outcome of one minimization run."""

    x: np.ndarray
    f: float
    grad_norm: float
    iterations: int
    n_evals: int
    reason: str  # "gradient" | "step" | "max_iterations" | "line_search"


@dataclass
class RestartSummary:
    index: int
    f_init: float
    f_final: float
    iterations: int
    reason: str


@dataclass
class MultiRestartResult:
    best: OptResult
    best_index: int
    restarts: list = field(default_factory=list)
    errors: list = field(default_factory=list)


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic through (a, fa, da), (b, fb, db); None if ill-posed."""
    if a == b:
        return None
    with np.errstate(all="ignore"):
        d1 = da + db - 3.0 * (fa - fb) / (a - b)
        rad = d1 * d1 - da * db
        if rad < 0:
            return None
        d2 = np.sign(b - a) * np.sqrt(rad)
        denom = db - da + 2.0 * d2
        if denom == 0:
            return None
        alpha = b - (b - a) * (db + d2 - d1) / denom
    if not np.isfinite(alpha):
        return None
    return float(alpha)


def _zoom(phi, phi0, dphi0, lo, f_lo, d_lo, pay_lo, hi, f_hi, d_hi):
    """Refine a bracketing interval until strong Wolfe holds.

    Invariant: ``lo`` satisfies the sufficient-decrease condition.  ``hi``
    may carry a +inf value (failed evaluation); interpolation then falls
    back to bisection.  Returns (alpha, f, dphi, payload, ok).
    """
    for _ in range(_MAX_ZOOM):
        if np.isfinite(f_hi) and np.isfinite(d_hi):
            alpha = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
        else:
            alpha = None
        span = abs(hi - lo)
        if alpha is None or not (min(lo, hi) + 0.1 * span <= alpha <= max(lo, hi) - 0.1 * span):
            alpha = 0.5 * (lo + hi)
        f_a, d_a, pay = phi(alpha)
        if not np.isfinite(f_a):
            hi, f_hi, d_hi = alpha, np.inf, np.nan
            continue
        if f_a > phi0 + _C1 * alpha * dphi0 or f_a >= f_lo:
            hi, f_hi, d_hi = alpha, f_a, d_a
        else:
            if abs(d_a) <= -_C2 * dphi0:
                return alpha, f_a, d_a, pay, True
            if d_a * (hi - lo) >= 0:
                hi, f_hi, d_hi = lo, f_lo, d_lo
            lo, f_lo, d_lo, pay_lo = alpha, f_a, d_a, pay
        if abs(hi - lo) <= 1e-16 * max(1.0, abs(lo)):
            break
    # fall back to the best sufficient-decrease point seen
    if lo > 0 and pay_lo is not None:
        return lo, f_lo, d_lo, pay_lo, False
    return None


def _line_search(phi, phi0, dphi0, alpha0):
    """Bracketing phase of the strong Wolfe search."""
    a_prev, f_prev, d_prev, pay_prev = 0.0, phi0, dphi0, None
    alpha = alpha0
    for i in range(_MAX_BRACKET):
        f_a, d_a, pay = phi(alpha)
        if not np.isfinite(f_a):
            return _zoom(phi, phi0, dphi0, a_prev, f_prev, d_prev, pay_prev,
                         alpha, np.inf, np.nan)
        if f_a > phi0 + _C1 * alpha * dphi0 or (i > 0 and f_a >= f_prev):
            return _zoom(phi, phi0, dphi0, a_prev, f_prev, d_prev, pay_prev,
                         alpha, f_a, d_a)
        if abs(d_a) <= -_C2 * dphi0:
            return alpha, f_a, d_a, pay, True
        if d_a >= 0:
            return _zoom(phi, phi0, dphi0, alpha, f_a, d_a, pay,
                         a_prev, f_prev, d_prev)
        a_prev, f_prev, d_prev, pay_prev = alpha, f_a, d_a, pay
        alpha *= 2.0
    # never bracketed; the last point kept decreasing, accept it
    if pay_prev is not None:
        return a_prev, f_prev, d_prev, pay_prev, False
    return None


def minimize(objective, x0, settings: OptimizerSettings) -> OptResult:
    """L-BFGS descent from ``x0``.

    ``objective(x)`` must return ``(value, gradient)`` and be finite at
    ``x0``.  Terminates when the gradient infinity-norm falls below
    ``gradient_tolerance``, the step below ``step_tolerance``, the
    iteration cap is reached, or the line search stalls; the result's
    ``reason`` records which.
    """
    x = np.array(x0, dtype=float).ravel()
    n_evals = [0]

    def evaluate(xq):
        n_evals[0] += 1
        f, g = objective(xq)
        return float(f), np.asarray(g, dtype=float).ravel()

    f, g = evaluate(x)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise ParameterError("objective not finite at the initial point")
    if float(np.max(np.abs(g))) <= settings.gradient_tolerance:
        return OptResult(x=x, f=f, grad_norm=float(np.max(np.abs(g))),
                         iterations=0, n_evals=n_evals[0], reason="gradient")

    s_mem, y_mem, rho_mem = [], [], []
    reason = "max_iterations"
    iterations = 0

    for it in range(1, settings.max_iterations + 1):
        iterations = it
        d = _two_loop_direction(g, s_mem, y_mem, rho_mem)
        dphi0 = float(d @ g)
        if dphi0 >= 0:
            # memory produced a non-descent direction; restart from steepest descent
            s_mem, y_mem, rho_mem = [], [], []
            d = -g
            dphi0 = float(d @ g)
        alpha0 = 1.0 if s_mem else min(1.0, 1.0 / max(1.0, float(np.abs(g).sum())))

        def phi(alpha):
            fq, gq = evaluate(x + alpha * d)
            if not (np.isfinite(fq) and np.all(np.isfinite(gq))):
                return np.inf, np.nan, None
            return fq, float(gq @ d), (fq, gq)

        hit = _line_search(phi, f, dphi0, alpha0)
        if hit is None:
            reason = "line_search"
            break
        alpha, f_new, _, payload, wolfe_ok = hit
        f_new, g_new = payload
        step = alpha * d
        s = step
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 1e-10 * float(np.linalg.norm(s) * np.linalg.norm(yv) + 1e-300):
            s_mem.append(s)
            y_mem.append(yv)
            rho_mem.append(1.0 / sy)
            if len(s_mem) > _MEMORY:
                s_mem.pop(0)
                y_mem.pop(0)
                rho_mem.pop(0)
        x = x + step
        f, g = f_new, g_new
        if float(np.max(np.abs(g))) <= settings.gradient_tolerance:
            reason = "gradient"
            break
        if float(np.max(np.abs(step))) <= settings.step_tolerance:
            reason = "step"
            break
        if not wolfe_ok:
            reason = "line_search"
            break

    return OptResult(x=x, f=f, grad_norm=float(np.max(np.abs(g))),
                     iterations=iterations, n_evals=n_evals[0], reason=reason)


def _two_loop_direction(g, s_mem, y_mem, rho_mem):
    """Implicit H @ (-g) via the standard two-loop recursion."""
    q = -g.copy()
    if not s_mem:
        return q
    alphas = []
    for s, y, rho in zip(reversed(s_mem), reversed(y_mem), reversed(rho_mem)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    gamma = float(s_mem[-1] @ y_mem[-1]) / float(y_mem[-1] @ y_mem[-1])
    q *= gamma
    for (s, y, rho), a in zip(zip(s_mem, y_mem, rho_mem), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def multi_restart_minimize(objective, init_sampler, settings: OptimizerSettings) -> MultiRestartResult:
    """Run ``num_restarts`` independent minimizations and keep the best.

    Restart ``r`` draws its starting point from
    ``init_sampler(numpy.random.default_rng(settings.seed + r))``, so the
    whole procedure is deterministic given ``settings.seed`` and results
    do not depend on whether restarts run concurrently.
    """
    restarts, results, errors = [], [], []
    for r in range(settings.num_restarts):
        rng = np.random.default_rng(settings.seed + r)
        x0 = np.asarray(init_sampler(rng), dtype=float).ravel()
        try:
            f0 = float(objective(x0)[0])
            res = minimize(objective, x0, settings)
        except Exception as exc:  # collected; only fatal if every restart fails
            errors.append((r, exc))
            continue
        results.append((r, res))
        restarts.append(RestartSummary(index=r, f_init=f0, f_final=res.f,
                                       iterations=res.iterations, reason=res.reason))
    if not results:
        raise FitError(f"all {settings.num_restarts} restarts failed", errors)
    best_index, best = min(results, key=lambda item: item[1].f)
    return MultiRestartResult(best=best, best_index=best_index,
                              restarts=restarts, errors=errors)
