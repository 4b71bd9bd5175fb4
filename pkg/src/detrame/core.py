"""Domain types and dictionary -> (metric, transform) conversions."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg


class IllConditionedError(ValueError):
    """Raised when Q cannot be factorized."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _check_finite(name, a):
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")


@dataclass(frozen=True)
class Dictionary:
    """Synthesis dictionary ``D`` (m x k) with ridge weight ``alpha`` and linear term ``d``."""

    D: np.ndarray
    alpha: float
    d: Optional[np.ndarray] = None

    def __post_init__(self):
        D = _frozen(self.D)
        if D.ndim != 2:
            raise ValueError(f"D must be 2-D, got shape {D.shape}")
        _check_finite("D", D)
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        d = np.zeros(D.shape[1]) if self.d is None else self.d
        d = _frozen(d).reshape(-1)
        if d.shape != (D.shape[1],):
            raise ValueError(f"d must have length {D.shape[1]}, got {d.shape}")
        _check_finite("d", d)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def m(self) -> int:
        return self.D.shape[0]

    @property
    def k(self) -> int:
        return self.D.shape[1]


@dataclass(frozen=True)
class QMetric:
    """Symmetric positive-definite matrix inducing the prox metric."""

    Q: np.ndarray

    def __post_init__(self):
        Q = np.array(self.Q, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise ValueError(f"Q must be square, got shape {Q.shape}")
        _check_finite("Q", Q)
        Q = 0.5 * (Q + Q.T)
        if np.any(np.diag(Q) <= 0):
            raise ValueError("Q must have a strictly positive diagonal")
        try:
            linalg.cholesky(Q, lower=True)
        except linalg.LinAlgError as e:
            raise IllConditionedError("Q is not positive definite") from e
        Q.setflags(write=False)
        object.__setattr__(self, "Q", Q)

    @property
    def k(self) -> int:
        return self.Q.shape[0]


@dataclass(frozen=True)
class Regularizer:
    """Elastic-net weights: ``lam`` on the l1 term, ``beta`` on the quadratic term."""

    lam: float = 0.05
    beta: float = 0.01

    def __post_init__(self):
        for name in ("lam", "beta"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be > 0, got {v}")
            object.__setattr__(self, name, float(v))


@dataclass
class AffineTransform:
    """``z -> W z - c``. Arrays are updated in place by the trainer."""

    W: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.W = np.array(self.W, dtype=np.float64)
        self.c = np.array(self.c, dtype=np.float64).reshape(-1)
        if self.W.ndim != 2 or self.c.shape != (self.W.shape[0],):
            raise ValueError(f"incompatible shapes W {self.W.shape}, c {self.c.shape}")
        _check_finite("W", self.W)
        _check_finite("c", self.c)

    def __call__(self, U: np.ndarray) -> np.ndarray:
        return self.W @ U - self.c[:, None]


@dataclass
class RnnCell:
    """Reparameterized prox parameters.

    ``Wt`` is the coupling matrix (zero diagonal), ``h`` lies in [0, 1]^k and
    ``b`` is nonnegative. ``tt_max`` is the number of unrolled steps.
    """

    Wt: np.ndarray
    h: np.ndarray
    b: np.ndarray
    tt_max: int = 3

    def __post_init__(self):
        self.Wt = np.array(self.Wt, dtype=np.float64)
        self.h = np.array(self.h, dtype=np.float64).reshape(-1)
        self.b = np.array(self.b, dtype=np.float64).reshape(-1)
        k = self.h.shape[0]
        if self.Wt.shape != (k, k) or self.b.shape != (k,):
            raise ValueError(
                f"incompatible cell shapes Wt {self.Wt.shape}, h {self.h.shape}, b {self.b.shape}"
            )
        if int(self.tt_max) < 1:
            raise ValueError(f"tt_max must be >= 1, got {self.tt_max}")
        self.tt_max = int(self.tt_max)
        problems = self.violations()
        if problems:
            raise ValueError("infeasible RnnCell: " + "; ".join(problems))

    @property
    def k(self) -> int:
        return self.h.shape[0]

    def violations(self) -> list:
        out = []
        for name in ("Wt", "h", "b"):
            if not np.all(np.isfinite(getattr(self, name))):
                out.append(f"{name} non-finite")
        if np.any(np.diag(self.Wt) != 0):
            out.append("diag(Wt) != 0")
        if np.any(self.h < 0) or np.any(self.h > 1):
            out.append("h outside [0, 1]")
        if np.any(self.b < 0):
            out.append("b negative")
        return out

    def is_feasible(self) -> bool:
        return not self.violations()

    @classmethod
    def init(cls, k: int, tt_max: int = 3) -> "RnnCell":
        """Start as a shifted ReLU: no coupling, h = 0.5, b = 0.01."""
        return cls(np.zeros((k, k)), np.full(k, 0.5), np.full(k, 0.01), tt_max)


@dataclass(frozen=True)
class SpdReport:
    symmetry_defect: float
    min_diag: float
    factorizes: bool
    min_eig: float = field(default=float("nan"))

    @property
    def ok(self) -> bool:
        return self.factorizes and self.symmetry_defect == 0.0 and self.min_diag > 0


def metric_from_dictionary(dct: Dictionary) -> QMetric:
    D = dct.D
    M = D.T @ D + dct.alpha * np.eye(dct.k)
    if not np.all(np.isfinite(M)):
        raise ValueError("non-finite entries in D^T D + alpha I")
    return QMetric(0.5 * (M + M.T))


def transform_from_dictionary(dct: Dictionary) -> tuple[AffineTransform, QMetric]:
    """Return ``(F, c)`` with ``F = Q^-1 D^T`` and ``c = Q^-1 d``, plus ``Q``.

    Both are obtained from a Cholesky factorization of Q.
    """
    qm = metric_from_dictionary(dct)
    try:
        fac = linalg.cho_factor(qm.Q, lower=True)
    except linalg.LinAlgError as e:
        raise IllConditionedError("dictionary gives a numerically singular Q") from e
    F = linalg.cho_solve(fac, dct.D.T)
    c = linalg.cho_solve(fac, dct.d)
    return AffineTransform(F, c), qm


def validate_spd(Q) -> SpdReport:
    """Diagnostics for a candidate metric. Never raises on bad input."""
    Q = np.asarray(getattr(Q, "Q", Q), dtype=np.float64)
    defect = float(np.max(np.abs(Q - Q.T))) if Q.size else 0.0
    min_diag = float(np.min(np.diag(Q))) if Q.size else float("nan")
    try:
        linalg.cholesky(Q, lower=True)
        ok = bool(np.all(np.isfinite(Q)))
    except (linalg.LinAlgError, ValueError):
        ok = False
    try:
        min_eig = float(np.linalg.eigvalsh(0.5 * (Q + Q.T))[0])
    except (np.linalg.LinAlgError, ValueError):
        min_eig = float("nan")
    return SpdReport(defect, min_diag, ok, min_eig)


def power_iteration(A: np.ndarray, n_iter: int = 50, seed: int = 0) -> float:
    """Largest eigenvalue estimate of a symmetric PSD matrix (Rayleigh quotient)."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(A.shape[0])
    v /= np.linalg.norm(v)
    for _ in range(n_iter):
        w = A @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
    return float(v @ (A @ v))
