"""Model container: plain-text header followed by little-endian float64 payload.

Layout::

    DETRAME-MODEL 1
    meta class_count 2
    meta in_shape 2
    layer 0 dense qmetric tt_max=3
    layer 1 conv qmetric tt_max=3 stride=1 padding=1 reshape=4x5x5:100
    param block0.linear.W 16,2 0
    ...
    end

Shapes are comma-separated; offsets are byte offsets into the payload, which
starts immediately after the ``end`` line. Extra arrays (e.g. feature
normalization) are stored as ``param`` lines with names outside the model.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import AffineTransform, RnnCell
from .net import Block, Conv2D, Dense, Model, PlainReLU, QMetricAct, Reshape

MAGIC = "DETRAME-MODEL 1"


class ModelFormatError(ValueError):
    pass


def _shape_str(shape) -> str:
    return ",".join(str(int(s)) for s in shape) if len(shape) else "-"


def _parse_shape(s: str) -> tuple:
    return () if s == "-" else tuple(int(v) for v in s.split(","))


def _dims(shape) -> str:
    return "x".join(str(s) for s in shape)


def save_model(path, model: Model, extras: dict | None = None) -> None:
    lines = [MAGIC, f"meta class_count {model.class_count}", f"meta in_shape {_shape_str(model.in_shape)}"]
    for i, blk in enumerate(model.blocks):
        words = [f"layer {i}", blk.linear.kind, blk.activation.kind]
        if isinstance(blk.activation, QMetricAct):
            words.append(f"tt_max={blk.activation.cell.tt_max}")
        if isinstance(blk.linear, Conv2D):
            words += [f"stride={blk.linear.stride}", f"padding={blk.linear.padding}"]
        if blk.reshape is not None:
            words.append(f"reshape={_dims(blk.reshape.in_shape)}:{_dims(blk.reshape.out_shape_)}")
        lines.append(" ".join(words))
    arrays = dict(model.params())
    for name, arr in (extras or {}).items():
        arrays[f"extra.{name}"] = np.asarray(arr, dtype=np.float64)
    payload = []
    offset = 0
    for name, arr in arrays.items():
        lines.append(f"param {name} {_shape_str(arr.shape)} {offset}")
        buf = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        payload.append(buf)
        offset += len(buf)
    lines.append("end")
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        for buf in payload:
            f.write(buf)


def load_model(path) -> tuple[Model, dict]:
    """Return ``(model, extras)``."""
    raw = Path(path).read_bytes()
    marker = b"\nend\n"
    cut = raw.find(marker)
    if not raw.startswith(MAGIC.encode()) or cut < 0:
        raise ModelFormatError(f"{path}: not a model container")
    header = raw[:cut].decode("ascii").splitlines()[1:]
    payload = raw[cut + len(marker):]
    meta, layers, arrays = {}, {}, {}
    for line in header:
        parts = line.split()
        if parts[0] == "meta":
            meta[parts[1]] = parts[2]
        elif parts[0] == "layer":
            opts = dict(p.split("=", 1) for p in parts[4:])
            layers[int(parts[1])] = (parts[2], parts[3], opts)
        elif parts[0] == "param":
            shape = _parse_shape(parts[2])
            off = int(parts[3])
            n = int(np.prod(shape)) if shape else 1
            if off + 8 * n > len(payload):
                raise ModelFormatError(f"{path}: truncated payload for {parts[1]}")
            arr = np.frombuffer(payload, dtype="<f8", count=n, offset=off)
            arrays[parts[1]] = arr.astype(np.float64).reshape(shape)
        else:
            raise ModelFormatError(f"{path}: bad header line {line!r}")

    def get(name):
        try:
            return arrays[name]
        except KeyError:
            raise ModelFormatError(f"{path}: missing array {name}") from None

    blocks = []
    for i in sorted(layers):
        lin_kind, act_kind, opts = layers[i]
        pre = f"block{i}"
        if lin_kind == "dense":
            lin = Dense(AffineTransform(get(f"{pre}.linear.W"), get(f"{pre}.linear.c")))
        elif lin_kind == "conv":
            lin = Conv2D(
                get(f"{pre}.linear.kernel"), get(f"{pre}.linear.bias"),
                int(opts.get("stride", 1)), int(opts.get("padding", 0)),
            )
        else:
            raise ModelFormatError(f"{path}: unknown linear kind {lin_kind}")
        if act_kind == "qmetric":
            act = QMetricAct(RnnCell(
                get(f"{pre}.act.Wt"), get(f"{pre}.act.h"), get(f"{pre}.act.b"), int(opts["tt_max"])
            ))
        elif act_kind == "relu":
            act = PlainReLU()
        else:
            raise ModelFormatError(f"{path}: unknown activation {act_kind}")
        reshape = None
        if "reshape" in opts:
            src, dst = opts["reshape"].split(":")
            reshape = Reshape(
                tuple(int(v) for v in src.split("x")), tuple(int(v) for v in dst.split("x"))
            )
        blocks.append(Block(lin, act, reshape))
    head = Dense(AffineTransform(get("head.W"), get("head.c")))
    model = Model(blocks, head, int(meta["class_count"]), _parse_shape(meta["in_shape"]))
    extras = {k[len("extra."):]: v for k, v in arrays.items() if k.startswith("extra.")}
    return model, extras
