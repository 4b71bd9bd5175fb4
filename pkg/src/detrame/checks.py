"""Verification suites shared by the CLI, the scripts and the acceptance tests."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import Dictionary, QMetric, Regularizer, RnnCell
from .net import (
    Conv2D, Dense, PlainReLU, QMetricAct, Reshape, build_convnet, build_mlp,
    finite_diff_check, layer_gradcheck, model_gradcheck,
)
from .qprox import ProxProblem, qprox_oracle, qprox_rnn, reparameterize, support_oracle
from .sdl import check_equivalence
from .train import softmax_cross_entropy


def random_dictionary(rng, m: int, k: int, alpha: float) -> Dictionary:
    D = rng.standard_normal((m, k))
    D /= np.linalg.norm(D, axis=0)
    return Dictionary(D, alpha)


def diag_dominant_metric(rng, k: int, margin: float = 1.1) -> QMetric:
    """Random symmetric Q with ``q_ii >= margin * sum_{l != i} |q_il|`` (hence SPD)."""
    A = rng.uniform(-1.0, 1.0, (k, k))
    A = 0.5 * (A + A.T)
    np.fill_diagonal(A, 0.0)
    diag = margin * np.abs(A).sum(axis=1) + rng.uniform(0.05, 1.0, k)
    return QMetric(A + np.diag(diag))


def random_cell(rng, k: int, tt_max: int = 3, coupling: float = 0.3) -> RnnCell:
    Wt = coupling * rng.standard_normal((k, k))
    np.fill_diagonal(Wt, 0.0)
    return RnnCell(Wt, rng.uniform(0.2, 0.9, k), rng.uniform(0.0, 0.2, k), tt_max)


def randomize_cells(model, rng, coupling: float = 0.3) -> None:
    for cell in model.cells():
        new = random_cell(rng, cell.k, cell.tt_max, coupling)
        cell.Wt[...] = new.Wt
        cell.h[...] = new.h
        cell.b[...] = new.b


# ---------------------------------------------------------------------------


def equivalence_sweep(instances=20, m=8, k=12, n=4, alpha=0.1, lam=0.05, beta=0.01,
                      tol=1e-6, solver_tol=1e-10, seed=0) -> list:
    """Direct sparse coding vs prox of the transformed input on random instances."""
    rng = np.random.default_rng(seed)
    reg = Regularizer(lam, beta)
    out = []
    for _ in range(instances):
        dct = random_dictionary(rng, m, k, alpha)
        X = rng.standard_normal((m, n))
        out.append(check_equivalence(dct, reg, X, tol, solver_tol))
    return out


@dataclass
class GradResult:
    name: str
    error: float


def gradcheck_suite(epsilon: float = 1e-5, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    res = []

    dense = Dense.init(3, 4, rng)
    dense.affine.c[...] = rng.standard_normal(4)
    res.append(GradResult("dense", layer_gradcheck(dense, rng.standard_normal((3, 5)), epsilon).max_rel_error))

    z = rng.uniform(0.1, 1.0, (4, 5)) * rng.choice([-1.0, 1.0], (4, 5))
    res.append(GradResult("relu", layer_gradcheck(PlainReLU(), z, epsilon).max_rel_error))

    act = QMetricAct(random_cell(rng, 4, 3))
    res.append(GradResult("qmetric", layer_gradcheck(act, rng.standard_normal((4, 5)), epsilon).max_rel_error))

    act = QMetricAct(random_cell(rng, 3, 2))
    res.append(GradResult("qmetric-conv", layer_gradcheck(act, rng.standard_normal((2, 3, 3, 3)), epsilon).max_rel_error))

    conv = Conv2D.init(2, 3, 3, rng, stride=1, padding=1)
    conv.bias[...] = rng.standard_normal(3)
    res.append(GradResult("conv", layer_gradcheck(conv, rng.standard_normal((2, 2, 5, 5)), epsilon).max_rel_error))

    conv = Conv2D.init(2, 2, 3, rng, stride=2, padding=0)
    res.append(GradResult("conv-stride2", layer_gradcheck(conv, rng.standard_normal((2, 2, 7, 7)), epsilon).max_rel_error))

    res.append(GradResult("reshape", layer_gradcheck(Reshape((2, 3, 2), (12,)), rng.standard_normal((4, 2, 3, 2)), epsilon).max_rel_error))

    logits = rng.standard_normal((3, 6))
    labels = rng.integers(0, 3, 6)

    def ce_fwd():
        loss, g = softmax_cross_entropy(logits, labels)
        return np.array(loss), g

    err = finite_diff_check(ce_fwd, lambda g, s: {"logits": g * float(s)}, {"logits": logits}, epsilon).max_rel_error
    res.append(GradResult("softmax-xent", err))

    model = build_mlp(3, [5, 4], 3, "qmetric", tt_max=3, seed=seed)
    randomize_cells(model, rng)
    for p in model.params().values():
        if p.ndim == 1 and p.size and not np.any(p):  # biases start at zero
            p[...] = 0.1 * rng.standard_normal(p.shape)
    X = rng.standard_normal((3, 6))
    y = rng.integers(0, 3, 6)
    res.append(GradResult("detrame-2layer", model_gradcheck(model, X, y, epsilon).max_rel_error))
    res.append(GradResult("detrame-2layer-logits", model_gradcheck(model, X, None, epsilon).max_rel_error))

    cmodel = build_convnet((1, 5, 5), [2], [4], 2, "qmetric", tt_max=2, seed=seed)
    randomize_cells(cmodel, rng)
    Xc = rng.standard_normal((3, 1, 5, 5))
    res.append(GradResult("detrame-conv", model_gradcheck(cmodel, Xc, rng.integers(0, 2, 3), epsilon).max_rel_error))
    return res


# ---------------------------------------------------------------------------


@dataclass
class BenchRow:
    tt_max: int
    instance: int
    max_err: float
    rnn_s: float
    oracle_s: float


def prox_bench(instances=10, k=8, n=16, tt_values=(1, 2, 3, 5, 10, 20, 50, 100, 200, 500),
               lam=0.05, beta=0.01, seed=0, oracle_tol=1e-10) -> list:
    """Unrolled recurrence vs proximal-gradient oracle on diagonally dominant metrics."""
    rng = np.random.default_rng(seed)
    reg = Regularizer(lam, beta)
    rows = []
    for i in range(instances):
        Q = diag_dominant_metric(rng, k)
        prob = ProxProblem(rng.standard_normal((k, n)), Q, reg)
        t0 = time.perf_counter()
        ref = qprox_oracle(prob, oracle_tol).U
        t_or = time.perf_counter() - t0
        for tt in tt_values:
            cell = reparameterize(Q, reg, tt)
            t0 = time.perf_counter()
            U = qprox_rnn(prob, cell)
            rows.append(BenchRow(tt, i, float(np.max(np.abs(U - ref))), time.perf_counter() - t0, t_or))
    return rows


def triple_oracle(prob: ProxProblem, tt_max: int = 500, tol: float = 1e-10):
    """Return the three pairwise max-entry discrepancies (rnn/oracle, rnn/support, oracle/support)."""
    cell = reparameterize(prob.Q, prob.reg, tt_max)
    U_rnn = qprox_rnn(prob, cell)
    U_or = qprox_oracle(prob, tol).U
    U_sup = np.column_stack([
        support_oracle(ProxProblem(prob.Z[:, j], prob.Q, prob.reg))[:, 0] for j in range(prob.N)
    ])
    d = lambda a, b: float(np.max(np.abs(a - b)))  # noqa: E731
    return d(U_rnn, U_or), d(U_rnn, U_sup), d(U_or, U_sup)
