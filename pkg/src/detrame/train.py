"""Projected SGD training of transform + Q-Metric networks."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .net import Model


class TrainingDivergence(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.05
    lr_decay: float = 0.1
    decay_epochs: tuple = ()
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    tt_max: int = 3
    lam: float = 0.05
    beta: float = 0.01
    alpha: float = 0.1
    momentum: float = 0.0  # extension; plain SGD when 0
    dataset: str = "two_moons"

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        self.decay_epochs = tuple(int(e) for e in self.decay_epochs)

    def lr_at(self, epoch: int) -> float:
        """Step decay: multiply by ``lr_decay`` at every configured epoch reached."""
        n = sum(1 for e in self.decay_epochs if epoch >= e)
        return self.lr * self.lr_decay**n


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float
    wall_s: float


@dataclass
class History:
    records: list = field(default_factory=list)
    error: Optional[str] = None

    def metrics(self) -> list:
        """Records without the wall time, for determinism comparisons."""
        return [(r.epoch, r.train_loss, r.train_acc, r.test_acc) for r in self.records]


def softmax_cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over columns of ``logits`` (C x N) and its gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64).reshape(-1)
    C, N = logits.shape
    if labels.shape != (N,):
        raise ValueError(f"expected {N} labels, got {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= C):
        raise ValueError(f"labels must lie in [0, {C})")
    shifted = logits - logits.max(axis=0, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=0))
    logp = shifted - logsum
    cols = np.arange(N)
    loss = -float(np.mean(logp[labels, cols]))
    grad = np.exp(logp)
    grad[labels, cols] -= 1.0
    return loss, grad / N


def project_params(model: Model) -> Model:
    for cell in model.cells():
        np.fill_diagonal(cell.Wt, 0.0)
        np.clip(cell.h, 0.0, 1.0, out=cell.h)
        np.maximum(cell.b, 0.0, out=cell.b)
    return model


def sgd_step(model: Model, grads: dict, lr: float, velocity: Optional[dict] = None,
             momentum: float = 0.0) -> Model:
    """``theta <- theta - lr * g`` for every parameter, then project the RNN cells."""
    params = model.params()
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence(f"non-finite gradient for {name}")
    for name, g in grads.items():
        if velocity is not None and momentum > 0:
            v = velocity.setdefault(name, np.zeros_like(g))
            v *= momentum
            v += g
            g = v
        params[name] -= lr * g
    return project_params(model)


def to_model_input(X):
    """Sample-first dataset features to the model's batch convention."""
    return X.T if X.ndim == 2 else X


def accuracy(model: Model, X, y, batch: int = 1024) -> float:
    if len(y) == 0:
        return float("nan")
    hits = 0
    for s in range(0, len(y), batch):
        hits += int(np.sum(model.predict(to_model_input(X[s : s + batch])) == y[s : s + batch]))
    return hits / len(y)


def train_loop(model: Model, train_set, test_set, config: TrainConfig, log=None) -> History:
    """Minibatch projected SGD. ``train_set``/``test_set`` are ``(X, y)`` with samples first."""
    Xtr, ytr = train_set
    Xte, yte = test_set
    rng = np.random.default_rng(config.seed)
    velocity = {} if config.momentum > 0 else None
    hist = History()
    n = len(ytr)
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        lr = config.lr_at(epoch)
        order = rng.permutation(n)
        tot_loss = 0.0
        try:
            for s in range(0, n, config.batch_size):
                idx = order[s : s + config.batch_size]
                logits, cache = model.forward(to_model_input(Xtr[idx]))
                loss, g = softmax_cross_entropy(logits, ytr[idx])
                tot_loss += loss * len(idx)
                sgd_step(model, model.backward(cache, g), lr, velocity, config.momentum)
        except (TrainingDivergence, ValueError) as e:
            hist.error = f"epoch {epoch}: {e}"
            e.history = hist
            raise
        rec = EpochRecord(
            epoch=epoch,
            train_loss=tot_loss / n,
            train_acc=accuracy(model, Xtr, ytr),
            test_acc=accuracy(model, Xte, yte),
            wall_s=time.perf_counter() - t0,
        )
        hist.records.append(rec)
        if log is not None:
            log(rec)
    return hist
