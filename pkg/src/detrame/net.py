"""Layers and models built from transforms and Q-Metric activations.

Every layer exposes ``params()`` (name -> array, mutated in place by the
trainer), ``forward(x) -> (y, cache)`` and ``backward(cache, gy) -> (gx, grads)``.

Batch conventions: vector features are stacked columnwise (``features x N``);
image tensors are batch-first (``N x C x H x W``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import AffineTransform, RnnCell


class ShapeError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    pass


def _param_shapes(layer) -> dict:
    return {k: v.shape for k, v in layer.params().items()}


# ---------------------------------------------------------------------------
# linear parts


class Dense:
    """``Z = W U - c 1^T``."""

    kind = "dense"

    def __init__(self, affine: AffineTransform):
        self.affine = affine

    @classmethod
    def init(cls, k_in: int, k_out: int, rng: np.random.Generator) -> "Dense":
        W = rng.standard_normal((k_out, k_in)) * np.sqrt(2.0 / k_in)
        return cls(AffineTransform(W, np.zeros(k_out)))

    def params(self) -> dict:
        return {"W": self.affine.W, "c": self.affine.c}

    @property
    def in_shape(self) -> tuple:
        return (self.affine.W.shape[1],)

    def out_shape(self, in_shape: tuple) -> tuple:
        if tuple(in_shape) != self.in_shape:
            raise ShapeError(f"dense expects input {self.in_shape}, got {tuple(in_shape)}")
        return (self.affine.W.shape[0],)

    def forward(self, U):
        if U.ndim != 2 or U.shape[0] != self.affine.W.shape[1]:
            raise ShapeError(
                f"dense expects ({self.affine.W.shape[1]}, N) input, got {U.shape}"
            )
        return self.affine(U), (U,)

    def backward(self, cache, gZ):
        (U,) = cache
        grads = {"W": gZ @ U.T, "c": -gZ.sum(axis=1)}
        return self.affine.W.T @ gZ, grads


def conv_out_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def im2col(x, kh, kw, stride, padding):
    """``(N, C, H, W) -> (N, Ho, Wo, C, kh, kw)`` patch view (copied)."""
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # N C Hp-kh+1 Wp-kw+1 kh kw
    win = win[:, :, ::stride, ::stride]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))


def col2im(cols, x_shape, kh, kw, stride, padding):
    N, C, H, W = x_shape
    _, Ho, Wo = cols.shape[:3]
    out = np.zeros((N, C, H + 2 * padding, W + 2 * padding))
    cols = cols.transpose(0, 3, 4, 5, 1, 2)  # N C kh kw Ho Wo
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += cols[:, :, i, j]
    return out[:, :, padding : padding + H, padding : padding + W]


class Conv2D:
    """Cross-correlation with ``+ bias``; input and output are batch-first."""

    kind = "conv"

    def __init__(self, kernel, bias, stride: int = 1, padding: int = 0):
        self.kernel = np.array(kernel, dtype=np.float64)
        self.bias = np.array(bias, dtype=np.float64).reshape(-1)
        if self.kernel.ndim != 4 or self.bias.shape != (self.kernel.shape[0],):
            raise ValueError(f"bad conv shapes kernel {self.kernel.shape}, bias {self.bias.shape}")
        if int(stride) < 1 or int(padding) < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")
        self.stride = int(stride)
        self.padding = int(padding)

    @classmethod
    def init(cls, in_ch, out_ch, ksize, rng, stride=1, padding=0) -> "Conv2D":
        fan_in = in_ch * ksize * ksize
        kernel = rng.standard_normal((out_ch, in_ch, ksize, ksize)) * np.sqrt(2.0 / fan_in)
        return cls(kernel, np.zeros(out_ch), stride, padding)

    def params(self) -> dict:
        return {"kernel": self.kernel, "bias": self.bias}

    def out_shape(self, in_shape: tuple) -> tuple:
        if len(in_shape) != 3 or in_shape[0] != self.kernel.shape[1]:
            raise ShapeError(
                f"conv expects ({self.kernel.shape[1]}, H, W) input, got {tuple(in_shape)}"
            )
        _, kh, kw = self.kernel.shape[1:]
        ho = conv_out_size(in_shape[1], kh, self.stride, self.padding)
        wo = conv_out_size(in_shape[2], kw, self.stride, self.padding)
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv output size {ho}x{wo} is not positive")
        return (self.kernel.shape[0], ho, wo)

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"conv expects (N, C, H, W) input, got {x.shape}")
        self.out_shape(x.shape[1:])
        _, _, kh, kw = self.kernel.shape
        cols = im2col(x, kh, kw, self.stride, self.padding)
        y = np.tensordot(cols, self.kernel, axes=([3, 4, 5], [1, 2, 3]))  # N Ho Wo O
        y = y + self.bias
        return np.ascontiguousarray(y.transpose(0, 3, 1, 2)), (x.shape, cols)

    def backward(self, cache, gy):
        x_shape, cols = cache
        _, _, kh, kw = self.kernel.shape
        g = gy.transpose(0, 2, 3, 1)  # N Ho Wo O
        grads = {
            "kernel": np.tensordot(g, cols, axes=([0, 1, 2], [0, 1, 2])),
            "bias": g.sum(axis=(0, 1, 2)),
        }
        gcols = np.tensordot(g, self.kernel, axes=([3], [0]))  # N Ho Wo C kh kw
        return col2im(gcols, x_shape, kh, kw, self.stride, self.padding), grads


def conv2d_apply(op: Conv2D, x) -> np.ndarray:
    return op.forward(np.asarray(x, dtype=np.float64))[0]


# ---------------------------------------------------------------------------
# activations


def _to_columns(x):
    """Channel vectors as columns: 4-D batch-first tensors become ``C x (N H W)``."""
    if x.ndim == 2:
        return x, None
    N, C, H, W = x.shape
    return x.transpose(1, 0, 2, 3).reshape(C, -1), x.shape


def _from_columns(m, shape):
    if shape is None:
        return m
    N, C, H, W = shape
    return np.ascontiguousarray(m.reshape(C, N, H, W).transpose(1, 0, 2, 3))


class QMetricAct:
    """Q-Metric activation: ``cell.tt_max`` unrolled steps of
    ``U <- ReLU(h * Z + Wt (U - Z) - b)`` starting from ``U = 0``.

    On image tensors the cell acts on the channel vector of every pixel.
    """

    kind = "qmetric"

    def __init__(self, cell: RnnCell):
        self.cell = cell

    def params(self) -> dict:
        return {"Wt": self.cell.Wt, "h": self.cell.h, "b": self.cell.b}

    def out_shape(self, in_shape: tuple) -> tuple:
        if in_shape[0] != self.cell.k:
            raise ShapeError(f"Q-Metric cell of size {self.cell.k} got {in_shape[0]} channels")
        return tuple(in_shape)

    def forward(self, x):
        Z, shape = _to_columns(x)
        if Z.shape[0] != self.cell.k:
            raise ShapeError(f"Q-Metric cell of size {self.cell.k} got {Z.shape[0]} rows")
        Wt, h, b = self.cell.Wt, self.cell.h[:, None], self.cell.b[:, None]
        hZ = h * Z
        U = np.zeros_like(Z)
        states, masks = [U], []
        for _ in range(self.cell.tt_max):
            A = hZ + Wt @ (U - Z) - b
            mask = A > 0
            U = np.where(mask, A, 0.0)
            states.append(U)
            masks.append(mask)
        return _from_columns(U, shape), (Z, shape, states, masks)

    def backward(self, cache, gy):
        Z, shape, states, masks = cache
        gU, _ = _to_columns(gy)
        Wt, h = self.cell.Wt, self.cell.h[:, None]
        gWt = np.zeros_like(Wt)
        gh = np.zeros(self.cell.k)
        gb = np.zeros(self.cell.k)
        gZ = np.zeros_like(Z)
        for t in reversed(range(len(masks))):
            gA = np.where(masks[t], gU, 0.0)
            gh += np.sum(gA * Z, axis=1)
            gb -= gA.sum(axis=1)
            gWt += gA @ (states[t] - Z).T
            WtA = Wt.T @ gA
            gZ += h * gA - WtA
            gU = WtA
        return _from_columns(gZ, shape), {"Wt": gWt, "h": gh, "b": gb}


class PlainReLU:
    kind = "relu"

    def params(self) -> dict:
        return {}

    def out_shape(self, in_shape: tuple) -> tuple:
        return tuple(in_shape)

    def forward(self, x):
        mask = x > 0
        return np.where(mask, x, 0.0), (mask,)

    def backward(self, cache, gy):
        (mask,) = cache
        return np.where(mask, gy, 0.0), {}


# ---------------------------------------------------------------------------
# reshaping


class Reshape:
    """Per-sample reshape in C order.

    A 1-D shape means the batch is stacked columnwise; otherwise batch-first.
    """

    kind = "reshape"

    def __init__(self, in_shape: Sequence[int], out_shape: Sequence[int]):
        self.in_shape = tuple(int(s) for s in in_shape)
        self.out_shape_ = tuple(int(s) for s in out_shape)
        if int(np.prod(self.in_shape)) != int(np.prod(self.out_shape_)):
            raise ValueError(f"cannot reshape {self.in_shape} into {self.out_shape_}")

    def params(self) -> dict:
        return {}

    def out_shape(self, in_shape: tuple) -> tuple:
        if tuple(in_shape) != self.in_shape:
            raise ShapeError(f"reshape expects {self.in_shape}, got {tuple(in_shape)}")
        return self.out_shape_

    @staticmethod
    def _move(x, src: tuple, dst: tuple):
        if len(src) == 1:
            if x.ndim != 2 or x.shape[0] != src[0]:
                raise ShapeError(f"reshape expects ({src[0]}, N), got {x.shape}")
            flat = x.T
        else:
            if x.shape[1:] != src:
                raise ShapeError(f"reshape expects (N, {src}), got {x.shape}")
            flat = x.reshape(x.shape[0], -1)
        if len(dst) == 1:
            return np.ascontiguousarray(flat.T)
        return flat.reshape((flat.shape[0],) + dst)

    def forward(self, x):
        return self._move(x, self.in_shape, self.out_shape_), ()

    def backward(self, cache, gy):
        return self._move(gy, self.out_shape_, self.in_shape), {}


# ---------------------------------------------------------------------------
# model


@dataclass
class Block:
    """``reshape(activation(linear(x)))``."""

    linear: object
    activation: object
    reshape: Optional[Reshape] = None

    def parts(self):
        return [self.linear, self.activation] + ([self.reshape] if self.reshape else [])


@dataclass
class Model:
    blocks: list
    head: Dense
    class_count: int
    in_shape: tuple = field(default=())

    def __post_init__(self):
        if not self.in_shape:
            first = self.blocks[0].linear if self.blocks else self.head
            if isinstance(first, Dense):
                self.in_shape = first.in_shape
            else:
                raise ValueError("in_shape is required for convolutional models")
        self.in_shape = tuple(self.in_shape)
        self.check_shapes()

    def check_shapes(self) -> None:
        shape = self.in_shape
        for i, blk in enumerate(self.blocks):
            try:
                for part in blk.parts():
                    shape = part.out_shape(shape)
            except ShapeError as e:
                raise ShapeError(f"block {i}: {e}") from None
        try:
            shape = self.head.out_shape(shape)
        except ShapeError as e:
            raise ShapeError(f"head: {e}") from None
        if shape != (self.class_count,):
            raise ShapeError(f"head produces {shape}, expected ({self.class_count},)")

    def named_layers(self):
        for i, blk in enumerate(self.blocks):
            yield f"block{i}.linear", blk.linear
            yield f"block{i}.act", blk.activation
            if blk.reshape is not None:
                yield f"block{i}.reshape", blk.reshape
        yield "head", self.head

    def params(self) -> dict:
        out = {}
        for name, layer in self.named_layers():
            for pname, arr in layer.params().items():
                out[f"{name}.{pname}"] = arr
        return out

    def cells(self) -> list:
        return [blk.activation.cell for blk in self.blocks if isinstance(blk.activation, QMetricAct)]

    def forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        expect = self.in_shape
        if len(expect) == 1:
            ok = X.ndim == 2 and X.shape[0] == expect[0]
        else:
            ok = X.shape[1:] == expect
        if not ok:
            raise ShapeError(f"input shape {X.shape} does not match model input {expect}")
        caches = []
        h = X
        for name, layer in self.named_layers():
            try:
                h, c = layer.forward(h)
            except ShapeError as e:
                raise ShapeError(f"{name}: {e}") from None
            caches.append((name, _param_shapes(layer), c))
        return h, caches

    def backward(self, cache, grad_logits, return_input_grad: bool = False):
        layers = list(self.named_layers())
        if len(cache) != len(layers):
            raise StaleCacheError("cache does not match model structure")
        grads = {}
        g = np.asarray(grad_logits, dtype=np.float64)
        for (name, layer), (cname, shapes, c) in zip(reversed(layers), reversed(cache)):
            if cname != name or shapes != _param_shapes(layer):
                raise StaleCacheError(f"{name}: parameters changed shape since forward")
            g, lg = layer.backward(c, g)
            for pname, arr in lg.items():
                grads[f"{name}.{pname}"] = arr
        return (grads, g) if return_input_grad else grads

    def predict(self, X) -> np.ndarray:
        logits, _ = self.forward(X)
        return np.argmax(logits, axis=0)


def make_activation(kind: str, k: int, tt_max: int = 3):
    if kind == "qmetric":
        return QMetricAct(RnnCell.init(k, tt_max))
    if kind == "relu":
        return PlainReLU()
    raise ValueError(f"unknown activation {kind!r}")


def build_mlp(
    in_dim: int,
    hidden: Sequence[int],
    class_count: int,
    activation: str = "qmetric",
    tt_max: int = 3,
    seed: int = 0,
) -> Model:
    rng = np.random.default_rng(seed)
    blocks = []
    k_in = in_dim
    for k in hidden:
        blocks.append(Block(Dense.init(k_in, k, rng), make_activation(activation, k, tt_max)))
        k_in = k
    return Model(blocks, Dense.init(k_in, class_count, rng), class_count, (in_dim,))


def build_convnet(
    in_shape: Sequence[int],
    channels: Sequence[int],
    hidden: Sequence[int],
    class_count: int,
    activation: str = "qmetric",
    tt_max: int = 3,
    ksize: int = 3,
    stride: int = 1,
    padding: int = 1,
    seed: int = 0,
) -> Model:
    """Conv blocks, a flatten, then dense blocks and the classifier."""
    rng = np.random.default_rng(seed)
    shape = tuple(in_shape)
    blocks = []
    for i, ch in enumerate(channels):
        conv = Conv2D.init(shape[0], ch, ksize, rng, stride, padding)
        shape = conv.out_shape(shape)
        blk = Block(conv, make_activation(activation, ch, tt_max))
        if i == len(channels) - 1:
            flat = (int(np.prod(shape)),)
            blk.reshape = Reshape(shape, flat)
            shape = flat
        blocks.append(blk)
    k_in = shape[0]
    for k in hidden:
        blocks.append(Block(Dense.init(k_in, k, rng), make_activation(activation, k, tt_max)))
        k_in = k
    return Model(blocks, Dense.init(k_in, class_count, rng), class_count, tuple(in_shape))


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheck:
    max_rel_error: float
    per_param: dict


def finite_diff_check(
    forward: Callable[[], tuple],
    backward: Callable[[object, np.ndarray], dict],
    params: dict,
    epsilon: float = 1e-5,
    seed: int = 0,
) -> GradCheck:
    """Central-difference check of ``backward`` against ``forward``.

    ``forward()`` returns ``(out, cache)`` and reads ``params`` (mutated in place
    here). The output is scalarized with a fixed random projection. Relative
    error uses ``max(|analytic|, |numeric|, 1e-8)`` as denominator.
    """
    out, cache = forward()
    proj = np.random.default_rng(seed).standard_normal(np.shape(out))
    analytic = backward(cache, proj)
    per = {}
    for name, p in params.items():
        g = np.asarray(analytic[name]).reshape(p.shape)
        worst = 0.0
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + epsilon
            fp = float(np.sum(proj * forward()[0]))
            p[idx] = orig - epsilon
            fm = float(np.sum(proj * forward()[0]))
            p[idx] = orig
            num = (fp - fm) / (2 * epsilon)
            den = max(abs(g[idx]), abs(num), 1e-8)
            worst = max(worst, float(abs(g[idx] - num) / den))
        per[name] = worst
    return GradCheck(float(max(per.values())) if per else 0.0, per)


def layer_gradcheck(layer, x, epsilon: float = 1e-5, seed: int = 0) -> GradCheck:
    """Gradient check of a single layer w.r.t. its parameters and its input."""
    x = np.array(x, dtype=np.float64)
    params = dict(layer.params())
    params["input"] = x

    def fwd():
        return layer.forward(x)

    def bwd(cache, g):
        gx, grads = layer.backward(cache, g)
        return {**grads, "input": gx}

    return finite_diff_check(fwd, bwd, params, epsilon, seed)


def model_gradcheck(model: Model, X, labels=None, epsilon: float = 1e-5, seed: int = 0) -> GradCheck:
    """Check all parameter gradients of ``model`` (optionally through the loss)."""
    from .train import softmax_cross_entropy

    X = np.asarray(X, dtype=np.float64)
    params = model.params()
    if labels is None:
        return finite_diff_check(lambda: model.forward(X), model.backward, params, epsilon, seed)

    def fwd():
        logits, cache = model.forward(X)
        loss, g = softmax_cross_entropy(logits, labels)
        return np.array(loss), (cache, g)

    def bwd(cache, gl):
        c, g = cache
        return model.backward(c, g * float(gl))

    return finite_diff_check(fwd, bwd, params, epsilon, seed)
