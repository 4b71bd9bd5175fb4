"""Proximity operator of the nonnegative elastic net in the metric induced by Q.

Three independent routes are provided:

* :func:`qprox_rnn` -- the unrolled Jacobi-style recurrence used inside networks,
* :func:`qprox_oracle` -- preconditioner-free proximal gradient (provably convergent),
* :func:`support_oracle` -- brute-force active-set enumeration for tiny ``k``.

:func:`fixed_point_residual` measures how far a candidate violates the
coordinatewise optimality conditions.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import QMetric, Regularizer, RnnCell, power_iteration


class NoSupportError(RuntimeError):
    """No active set satisfies the KKT conditions within tolerance."""


@dataclass(frozen=True)
class ProxProblem:
    """``argmin_U 0.5 ||U - Z||_{F,Q}^2 + lam ||U||_1 + beta/2 ||U||_F^2, U >= 0``."""

    Z: np.ndarray
    Q: QMetric
    reg: Regularizer

    def __post_init__(self):
        Z = np.array(self.Z, dtype=np.float64)
        if Z.ndim == 1:
            Z = Z[:, None]
        if Z.ndim != 2 or Z.shape[1] < 1:
            raise ValueError(f"Z must be k x N with N >= 1, got {Z.shape}")
        if Z.shape[0] != self.Q.k:
            raise ValueError(f"Z has {Z.shape[0]} rows but Q is {self.Q.k} x {self.Q.k}")
        if not np.all(np.isfinite(Z)):
            raise ValueError("Z has non-finite entries")
        Z.setflags(write=False)
        object.__setattr__(self, "Z", Z)

    @property
    def k(self) -> int:
        return self.Z.shape[0]

    @property
    def N(self) -> int:
        return self.Z.shape[1]

    def objective(self, U: np.ndarray) -> float:
        R = U - self.Z
        lam, beta = self.reg.lam, self.reg.beta
        return float(
            0.5 * np.sum(R * (self.Q.Q @ R)) + lam * np.sum(np.abs(U)) + 0.5 * beta * np.sum(U * U)
        )


@dataclass
class OracleResult:
    U: np.ndarray
    n_iter: int
    converged: bool
    objectives: list = field(default_factory=list)


def reparameterize(Q: QMetric, reg: Regularizer, tt_max: int = 3) -> RnnCell:
    q = np.diag(Q.Q).copy()
    if np.any(q <= 0):
        raise ValueError("Q has a nonpositive diagonal entry")
    denom = q + reg.beta
    Wt = -Q.Q / denom[:, None]
    np.fill_diagonal(Wt, 0.0)
    return RnnCell(Wt, q / denom, reg.lam / denom, tt_max)


def rnn_step(U: np.ndarray, Z: np.ndarray, cell: RnnCell) -> np.ndarray:
    A = cell.h[:, None] * Z + cell.Wt @ (U - Z) - cell.b[:, None]
    return np.maximum(A, 0.0)


def qprox_rnn(prob: ProxProblem, cell: RnnCell, tol: Optional[float] = None) -> np.ndarray:
    """Run the recurrence from ``U = 0`` for ``cell.tt_max`` steps.

    With ``tol`` set, stop early once the max-entry change drops to ``tol``.
    """
    if cell.k != prob.k:
        raise ValueError(f"cell size {cell.k} does not match problem size {prob.k}")
    Z = prob.Z
    U = np.zeros_like(Z)
    for _ in range(cell.tt_max):
        U_new = rnn_step(U, Z, cell)
        done = tol is not None and np.max(np.abs(U_new - U)) <= tol
        U = U_new
        if done:
            break
    return U


def qprox_oracle(
    prob: ProxProblem,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    U0: Optional[np.ndarray] = None,
    track_objective: bool = False,
) -> OracleResult:
    """Proximal gradient on the Q-weighted problem with step ``1 / lambda_max(Q)``."""
    Q = prob.Q.Q
    Z = prob.Z
    lam, beta = prob.reg.lam, prob.reg.beta
    gamma = 1.0 / power_iteration(Q, n_iter=50, seed=0)
    U = np.zeros_like(Z) if U0 is None else np.array(U0, dtype=np.float64).reshape(Z.shape)
    objs = [prob.objective(U)] if track_objective else []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        V = U - gamma * (Q @ (U - Z))
        U_new = np.maximum(V - gamma * lam, 0.0) / (1.0 + gamma * beta)
        change = np.max(np.abs(U_new - U))
        U = U_new
        if track_objective:
            objs.append(prob.objective(U))
        if change <= tol:
            converged = True
            break
    return OracleResult(U, it, converged, objs)


def support_oracle(prob: ProxProblem, kkt_tol: float = 1e-9) -> np.ndarray:
    """Exact solution by trying every support; single-column problems with k <= 12."""
    if prob.N != 1:
        raise ValueError("support_oracle handles a single column (N = 1)")
    k = prob.k
    if k > 12:
        raise ValueError(f"k = {k} too large for 2^k enumeration")
    Q = prob.Q.Q
    z = prob.Z[:, 0]
    lam, beta = prob.reg.lam, prob.reg.beta
    Qz = Q @ z
    for size in range(k + 1):
        for S in itertools.combinations(range(k), size):
            S = list(S)
            u = np.zeros(k)
            if S:
                A = Q[np.ix_(S, S)] + beta * np.eye(size)
                u[S] = np.linalg.solve(A, Qz[S] - lam)
                if np.any(u[S] < -kkt_tol):
                    continue
            g = Q @ u - Qz + lam
            off = np.setdiff1d(np.arange(k), S)
            if np.all(g[off] >= -kkt_tol):
                return np.maximum(u, 0.0)[:, None]
    raise NoSupportError("no support pattern satisfies the KKT conditions")


def fixed_point_residual(U: np.ndarray, prob: ProxProblem) -> float:
    """``max |U - T(U)|`` for the coordinatewise optimality map ``T``.

    ``T(U)_ij = q_ii z_ij / (q_ii + beta) - v_ij`` when positive, else 0, with
    ``v_ij = (lam + sum_{l != i} q_il (u_lj - z_lj)) / (q_ii + beta)``.
    """
    U = np.asarray(U, dtype=np.float64).reshape(prob.Z.shape)
    Q = prob.Q.Q
    Z = prob.Z
    q = np.diag(Q)[:, None]
    denom = q + prob.reg.beta
    R = U - Z
    off = Q @ R - q * R
    V = (prob.reg.lam + off) / denom
    cand = q * Z / denom - V
    T = np.where(q * Z > denom * V, cand, 0.0)
    return float(np.max(np.abs(U - T)))
