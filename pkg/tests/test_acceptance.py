"""Exit criteria. Each test prints (and records for the summary) one PASS/FAIL line."""
import time
from pathlib import Path

import numpy as np

from conftest import ACCEPTANCE_LINES
from detrame.checks import (
    diag_dominant_metric, equivalence_sweep, gradcheck_suite, random_dictionary, triple_oracle,
)
from detrame.cli import run_command
from detrame.core import QMetric, Regularizer, metric_from_dictionary
from detrame.data import gen_two_moons, standardize
from detrame.net import build_mlp
from detrame.qprox import ProxProblem, fixed_point_residual, qprox_oracle, qprox_rnn, reparameterize
from detrame.train import TrainConfig, project_params, sgd_step, train_loop

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def report(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_equivalence_of_synthesis_code_and_metric_prox():
    t0 = time.perf_counter()
    reports = equivalence_sweep(instances=20, m=8, k=12, n=4, alpha=0.1, lam=0.05, beta=0.01,
                                tol=1e-6, solver_tol=1e-10, seed=2024)
    dt = time.perf_counter() - t0
    worst = max(r.max_discrepancy for r in reports)
    report("sparse code == Q-prox(FX - c)", worst <= 1e-6 and dt < 10,
           f"max discrepancy {worst:.2e} (<= 1e-6), {dt:.2f}s (< 10s)")


def test_fixed_point_of_oracle_output():
    rng = np.random.default_rng(7)
    reg = Regularizer(0.05, 0.01)
    worst = 0.0
    for _ in range(50):
        Q = metric_from_dictionary(random_dictionary(rng, 8, 12, 0.1))
        prob = ProxProblem(rng.standard_normal((12, 4)), Q, reg)
        worst = max(worst, fixed_point_residual(qprox_oracle(prob, tol=1e-10).U, prob))
    report("fixed-point residual at oracle tol 1e-10", worst <= 1e-8,
           f"max residual {worst:.2e} over 50 instances (<= 1e-8)")


def test_triple_oracle_agreement():
    rng = np.random.default_rng(11)
    worst = 0.0
    for i in range(50):
        k = 1 + i % 8
        Q = diag_dominant_metric(rng, k)
        reg = Regularizer(rng.uniform(0.01, 0.5), rng.uniform(0.01, 0.5))
        prob = ProxProblem(rng.standard_normal((k, 3)) * 2, Q, reg)
        worst = max(worst, *triple_oracle(prob, tt_max=500))
    report("rnn(500) / prox-gradient / support enumeration", worst <= 1e-6,
           f"max pairwise discrepancy {worst:.2e} over 50 instances, k <= 8 (<= 1e-6)")


def test_gradient_suite():
    results = gradcheck_suite(epsilon=1e-5, seed=0)
    worst = max(results, key=lambda r: r.error)
    names = {r.name for r in results}
    assert {"dense", "relu", "qmetric", "conv", "reshape", "softmax-xent", "detrame-2layer"} <= names
    report("finite-difference gradients", worst.error <= 1e-4,
           f"{len(results)} checks, worst {worst.name} {worst.error:.2e} (<= 1e-4)")


def test_constraints_preserved_by_sgd():
    rng = np.random.default_rng(3)
    model = build_mlp(4, [6, 5], 3, "qmetric", tt_max=3, seed=0)
    ok = True
    for _ in range(100):
        grads = {k: rng.standard_normal(v.shape) * rng.uniform(0.1, 50) for k, v in model.params().items()}
        sgd_step(model, grads, rng.uniform(1e-3, 1.0))
        for c in model.cells():
            ok &= bool(np.all(np.diag(c.Wt) == 0) and np.all(c.h >= 0) and np.all(c.h <= 1) and np.all(c.b >= 0))
    snap = {k: v.copy() for k, v in model.params().items()}
    project_params(model)
    idem = all(np.array_equal(v, snap[k]) for k, v in model.params().items())
    report("RNN constraints after 100 SGD steps", ok and idem,
           f"diag 0 / h in [0,1] / b >= 0 held: {ok}; projection idempotent: {idem}")


def _moons_accuracy(activation, seed):
    tr = gen_two_moons(250, 0.1, seed=1000 + seed, split="train")
    te = gen_two_moons(250, 0.1, seed=2000 + seed, split="test")
    _, _, Xtr, (Xte,) = standardize(tr.X, te.X)
    model = build_mlp(2, [16, 16], 2, activation, tt_max=3, seed=seed)
    cfg = TrainConfig(lr=0.1, epochs=50, batch_size=32, decay_epochs=(40,), seed=seed)
    return train_loop(model, (Xtr, tr.y), (Xte, te.y), cfg).records[-1].test_acc


def test_two_moons_directional():
    t0 = time.perf_counter()
    qm = np.mean([_moons_accuracy("qmetric", s) for s in range(5)])
    relu = np.mean([_moons_accuracy("relu", s) for s in range(5)])
    dt = time.perf_counter() - t0
    ok = qm >= 0.95 and qm >= relu - 0.005 and dt < 120
    report("two-moons 2-layer Q-Metric vs ReLU", ok,
           f"test acc {qm:.4f} (>= 0.95) vs ReLU {relu:.4f} (>= baseline - 0.005), {dt:.1f}s (< 120s)")


def test_separable_closed_form():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(20):
        k = rng.integers(1, 10)
        q = rng.uniform(0.1, 10, k)
        lam, beta = rng.uniform(0.01, 2), rng.uniform(0.01, 2)
        Z = rng.standard_normal((k, 5)) * 3
        prob = ProxProblem(Z, QMetric(np.diag(q)), Regularizer(lam, beta))
        expect = np.maximum((q[:, None] * Z - lam) / (q[:, None] + beta), 0.0)
        for tt in (1, 3):
            U = qprox_rnn(prob, reparameterize(prob.Q, prob.reg, tt))
            err = np.max(np.abs(U - expect) / np.maximum(np.abs(expect), 1.0))
            worst = max(worst, err)
    eps = np.finfo(float).eps
    report("diagonal-Q prox closed form", worst <= 4 * eps,
           f"max rel error {worst:.1e} (<= 4 ulp = {4 * eps:.1e})")


def test_train_cli_deterministic(tmp_path):
    cfg = str(CONFIGS / "two_moons.cfg")
    codes = [run_command(["train", "--config", cfg, "--out", str(tmp_path / d)]) for d in ("a", "b")]
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "metrics.csv").read_bytes()
    report("train CLI determinism", codes == [0, 0] and a == b,
           f"exit codes {codes}, metrics.csv bit-identical: {a == b}")
