"""Direct synthesis sparse coding and its equivalence with the Q-metric prox."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Dictionary, Regularizer, power_iteration, transform_from_dictionary
from .qprox import ProxProblem, qprox_oracle


@dataclass
class SparseCode:
    a: np.ndarray
    objective: float
    iterations_used: int
    converged: bool = True
    objectives: list = field(default_factory=list)


@dataclass(frozen=True)
class EquivalenceReport:
    max_discrepancy: float
    tol: float
    A_direct: np.ndarray
    A_prox: np.ndarray

    @property
    def passed(self) -> bool:
        return self.max_discrepancy <= self.tol


def sdl_objective(dct: Dictionary, reg: Regularizer, x: np.ndarray, a: np.ndarray) -> float:
    if np.any(a < 0):
        return float("inf")
    r = x - dct.D @ a
    return float(
        0.5 * r @ r
        + 0.5 * dct.alpha * a @ a
        + dct.d @ a
        + reg.lam * np.sum(a)
        + 0.5 * reg.beta * a @ a
    )


def sparse_code(
    dct: Dictionary,
    reg: Regularizer,
    x,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    a0: Optional[np.ndarray] = None,
    track_objective: bool = False,
) -> SparseCode:
    """Nonnegative elastic-net sparse code of ``x`` over ``dct.D`` by ISTA.

    The smooth part ``0.5||x - Da||^2 + alpha/2 ||a||^2 + d^T a`` takes the
    gradient step; ``lam ||a||_1 + beta/2 ||a||^2 + i_{a >= 0}`` is handled by
    its closed-form prox.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape != (dct.m,):
        raise ValueError(f"x must have length {dct.m}, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("x has non-finite entries")
    D, alpha, d = dct.D, dct.alpha, dct.d
    DtD = D.T @ D
    Dtx = D.T @ x
    gamma = 1.0 / (power_iteration(DtD, n_iter=100, seed=0) + alpha)
    a = np.zeros(dct.k) if a0 is None else np.maximum(np.asarray(a0, dtype=np.float64), 0.0)
    objs = [sdl_objective(dct, reg, x, a)] if track_objective else []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        grad = DtD @ a - Dtx + alpha * a + d
        v = a - gamma * grad
        a_new = np.maximum(v - gamma * reg.lam, 0.0) / (1.0 + gamma * reg.beta)
        change = np.max(np.abs(a_new - a))
        a = a_new
        if track_objective:
            objs.append(sdl_objective(dct, reg, x, a))
        if change <= tol:
            converged = True
            break
    return SparseCode(a, sdl_objective(dct, reg, x, a), it, converged, objs)


def check_equivalence(
    dct: Dictionary,
    reg: Regularizer,
    X,
    tol: float = 1e-6,
    solver_tol: float = 1e-10,
    max_iter: int = 100_000,
) -> EquivalenceReport:
    """Compare direct sparse codes of the columns of ``X`` against ``prox^Q(F X - c)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    A1 = np.column_stack(
        [sparse_code(dct, reg, X[:, j], solver_tol, max_iter).a for j in range(X.shape[1])]
    )
    Fc, Q = transform_from_dictionary(dct)
    A2 = qprox_oracle(ProxProblem(Fc(X), Q, reg), solver_tol, max_iter).U
    return EquivalenceReport(float(np.max(np.abs(A1 - A2))), tol, A1, A2)
