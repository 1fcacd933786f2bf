"""Positive semi-definite inter-task correlation matrices.

An M x M correlation matrix is parameterized as low rank plus scaled
identity,

    A = a0^2 * I + B @ B.T,

with ``B`` an M x k matrix of free parameters.  PSD holds by construction
for every parameter value, so nothing needs projecting during optimization.
The parameterization is not identifiable (negating a column of B leaves A
unchanged); compare materialized matrices, never raw parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ShapeError


@dataclass(frozen=True)
class TaskCorrMatrix:
    """Low-rank-plus-scaled-identity PSD matrix over tasks.

    ``rank == 0`` is legal and means a pure ``a0^2 * I`` term (no
    inter-task coupling through this matrix).
    """

    num_tasks: int
    rank: int
    a0: float = 1.0
    B: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.num_tasks < 1:
            raise ShapeError(f"num_tasks must be >= 1, got {self.num_tasks}")
        if not 0 <= self.rank <= self.num_tasks:
            raise ShapeError(f"rank must be in [0, {self.num_tasks}], got {self.rank}")
        B = self.B
        if B is None:
            B = np.zeros((self.num_tasks, self.rank))
        B = np.asarray(B, dtype=float)
        if B.shape != (self.num_tasks, self.rank):
            raise ShapeError(f"B must have shape {(self.num_tasks, self.rank)}, got {B.shape}")
        if not (np.isfinite(self.a0) and np.all(np.isfinite(B))):
            raise ParameterError("non-finite task-correlation parameters")
        object.__setattr__(self, "a0", float(self.a0))
        object.__setattr__(self, "B", B)

    @property
    def num_params(self) -> int:
        """Scalar parameter count: a0 plus every entry of B."""
        return 1 + self.num_tasks * self.rank

    def materialize(self) -> np.ndarray:
        """Return A = a0^2 * I + B B^T (symmetric PSD)."""
        A = self.B @ self.B.T
        A[np.diag_indices_from(A)] += self.a0 ** 2
        return A

    def grads(self) -> list:
        """dA w.r.t. each scalar parameter, ordered [a0, B column-major].

        dA/da0 = 2 a0 I; dA/dB[m, c] = e_m b_c^T + b_c e_m^T.
        """
        M, k = self.num_tasks, self.rank
        out = [2.0 * self.a0 * np.eye(M)]
        for c in range(k):
            bc = self.B[:, c]
            for m in range(M):
                G = np.zeros((M, M))
                G[m, :] += bc
                G[:, m] += bc
                out.append(G)
        return out

    def flat_params(self) -> np.ndarray:
        """[a0, B column-major], matching ``grads`` ordering."""
        return np.concatenate(([self.a0], self.B.ravel(order="F")))

    def with_flat_params(self, theta) -> "TaskCorrMatrix":
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.shape[0] != self.num_params:
            raise ShapeError(f"expected {self.num_params} parameters, got {theta.shape[0]}")
        B = theta[1:].reshape((self.num_tasks, self.rank), order="F")
        return TaskCorrMatrix(self.num_tasks, self.rank, theta[0], B)

    @classmethod
    def identity(cls, num_tasks: int, rank: int = 0) -> "TaskCorrMatrix":
        return cls(num_tasks, rank, a0=1.0)

    @classmethod
    def zero(cls, num_tasks: int, rank: int = 0) -> "TaskCorrMatrix":
        return cls(num_tasks, rank, a0=0.0)

    @classmethod
    def random_init(cls, num_tasks: int, rank: int, rng) -> "TaskCorrMatrix":
        """Draw a starting point near identity: a0 ~ U[0.5, 1.5], B ~ N(0, 0.5^2)."""
        a0 = rng.uniform(0.5, 1.5)
        B = rng.normal(0.0, 0.5, size=(num_tasks, rank))
        return cls(num_tasks, rank, a0, B)


def task_corr_grad(tc: TaskCorrMatrix) -> list:
    """Module-level alias for :meth:`TaskCorrMatrix.grads`."""
    return tc.grads()


def materialize(tc: TaskCorrMatrix) -> np.ndarray:
    """Module-level alias for :meth:`TaskCorrMatrix.materialize`."""
    return tc.materialize()
