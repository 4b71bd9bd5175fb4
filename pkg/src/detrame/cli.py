"""Command-line harness: ``detrame {train,eval,equiv-check,gradcheck,prox-bench}``.

Config files are ``key = value`` lines with ``#`` comments and ``[section]``
headers; keys before the first header belong to ``[general]``.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import checks
from .data import Dataset, IdxError, gen_two_moons, load_idx, standardize
from .modelio import ModelFormatError, load_model, save_model
from .net import build_convnet, build_mlp
from .train import TrainConfig, TrainingDivergence, accuracy, train_loop

log = logging.getLogger("detrame")

METRICS_HEADER = ["epoch", "train_loss", "train_acc", "test_acc", "wall_s"]
BENCH_HEADER = ["tt_max", "instance", "max_err", "rnn_s", "oracle_s"]
EQUIV_HEADER = ["instance", "max_discrepancy", "passed"]


class ConfigError(ValueError):
    pass


def read_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), default_section="__none__")
    if path is None:
        return cp
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    try:
        cp.read_string("[general]\n" + text, source=str(path))
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    return cp


def _get(cp, section, key, default, kind=str):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key).strip()
    try:
        if kind is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        if kind is list:
            return [int(v) for v in raw.replace(",", " ").split()]
        if kind is tuple:
            return tuple(int(v) for v in raw.replace(",", " ").split())
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}") from None


def _seed(cp, args) -> int:
    return args.seed if args.seed is not None else _get(cp, "general", "seed", 0, int)


def load_datasets(cp, seed: int) -> tuple[Dataset, Dataset]:
    kind = _get(cp, "data", "dataset", "two_moons")
    if kind == "two_moons":
        n_train = _get(cp, "data", "n_train", 250, int)
        n_test = _get(cp, "data", "n_test", 250, int)
        noise = _get(cp, "data", "noise", 0.1, float)
        data_seed = _get(cp, "data", "seed", seed, int)
        tr = gen_two_moons(n_train, noise, data_seed, "train")
        te = gen_two_moons(n_test, noise, data_seed + 1, "test")
        return tr, te
    if kind == "idx":
        classes = _get(cp, "data", "class_count", 10, int)
        flatten = not _get(cp, "model", "conv_channels", [], list)
        paths = [_get(cp, "data", k, None) for k in ("train_images", "train_labels", "test_images", "test_labels")]
        if None in paths:
            raise ConfigError("idx dataset needs train_images, train_labels, test_images, test_labels")
        tr = load_idx(paths[0], paths[1], classes, "train", flatten)
        te = load_idx(paths[2], paths[3], classes, "test", flatten)
        limit = _get(cp, "data", "limit", 0, int)
        if limit:
            tr = Dataset(tr.X[:limit], tr.y[:limit], "train", tr.provenance, classes)
            te = Dataset(te.X[:limit], te.y[:limit], "test", te.provenance, classes)
        return tr, te
    raise ConfigError(f"unknown dataset {kind!r}")


def build_model(cp, in_shape, class_count, seed):
    hidden = _get(cp, "model", "hidden", [16, 16], list)
    act = _get(cp, "model", "activation", "qmetric")
    if act not in ("qmetric", "relu"):
        raise ConfigError(f"unknown activation {act!r}")
    tt = _get(cp, "model", "tt_max", 3, int)
    channels = _get(cp, "model", "conv_channels", [], list)
    if channels:
        return build_convnet(
            in_shape, channels, hidden, class_count, act, tt,
            ksize=_get(cp, "model", "kernel", 3, int),
            stride=_get(cp, "model", "stride", 1, int),
            padding=_get(cp, "model", "padding", 1, int),
            seed=seed,
        )
    return build_mlp(int(np.prod(in_shape)), hidden, class_count, act, tt, seed)


def train_config(cp, seed) -> TrainConfig:
    lr = _get(cp, "train", "lr", 0.1, float)
    if lr <= 0:
        raise ConfigError("[train] lr must be > 0")
    try:
        return TrainConfig(
            lr=lr,
            lr_decay=_get(cp, "train", "lr_decay", 0.1, float),
            decay_epochs=_get(cp, "train", "decay_epochs", (), tuple),
            epochs=_get(cp, "train", "epochs", 50, int),
            batch_size=_get(cp, "train", "batch_size", 32, int),
            seed=seed,
            tt_max=_get(cp, "model", "tt_max", 3, int),
            momentum=_get(cp, "train", "momentum", 0.0, float),
            dataset=_get(cp, "data", "dataset", "two_moons"),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _prepare(cp, seed):
    tr, te = load_datasets(cp, seed)
    mean, std, Xtr, (Xte,) = standardize(tr.X, te.X)
    return tr, te, mean, std, Xtr, Xte


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args, cp) -> int:
    seed = _seed(cp, args)
    cfg = train_config(cp, seed)
    tr, te, mean, std, Xtr, Xte = _prepare(cp, seed)
    model = build_model(cp, tr.X.shape[1:], tr.class_count, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wall = _get(cp, "output", "wall_time", False, bool)

    hist = train_loop(
        model, (Xtr, tr.y), (Xte, te.y), cfg,
        log=lambda r: log.info("epoch %d loss %.4f train %.4f test %.4f", r.epoch, r.train_loss, r.train_acc, r.test_acc),
    )
    rows = [
        (r.epoch, r.train_loss, r.train_acc, r.test_acc, r.wall_s if wall else 0.0)
        for r in hist.records
    ]
    write_csv(out / "metrics.csv", METRICS_HEADER, rows)
    save_model(out / "model.bin", model, {"norm.mean": mean, "norm.std": std})
    last = hist.records[-1]
    print(f"train_acc={last.train_acc:.4f} test_acc={last.test_acc:.4f}")
    return 0


def cmd_eval(args, cp) -> int:
    seed = _seed(cp, args)
    path = Path(args.model) if args.model else Path(args.out) / "model.bin"
    model, extras = load_model(path)
    _, te = load_datasets(cp, seed)
    X = te.X
    if "norm.mean" in extras:
        X = (X - extras["norm.mean"]) / extras["norm.std"]
    print(f"accuracy={accuracy(model, X, te.y):.4f} n={len(te)}")
    return 0


def cmd_equiv(args, cp) -> int:
    s = "equiv"
    tol = _get(cp, s, "tol", 1e-6, float)
    reports = checks.equivalence_sweep(
        instances=_get(cp, s, "instances", 20, int),
        m=_get(cp, s, "m", 8, int),
        k=_get(cp, s, "k", 12, int),
        n=_get(cp, s, "n", 4, int),
        alpha=_get(cp, s, "alpha", 0.1, float),
        lam=_get(cp, s, "lam", 0.05, float),
        beta=_get(cp, s, "beta", 0.01, float),
        tol=tol,
        solver_tol=_get(cp, s, "solver_tol", 1e-10, float),
        seed=_seed(cp, args),
    )
    worst = max(r.max_discrepancy for r in reports)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "equiv.csv", EQUIV_HEADER,
                  [(i, r.max_discrepancy, int(r.passed)) for i, r in enumerate(reports)])
    print(f"max_discrepancy={worst:.3e} tol={tol:.1e} instances={len(reports)}")
    return 0 if worst <= tol else 1


def cmd_gradcheck(args, cp) -> int:
    tol = _get(cp, "gradcheck", "tol", 1e-4, float)
    eps = _get(cp, "gradcheck", "epsilon", 1e-5, float)
    ok = True
    for r in checks.gradcheck_suite(eps, _seed(cp, args)):
        good = r.error <= tol
        ok &= good
        print(f"{'PASS' if good else 'FAIL'} {r.name:<24s} max_rel_err={r.error:.3e}")
    return 0 if ok else 1


def cmd_bench(args, cp) -> int:
    s = "bench"
    rows = checks.prox_bench(
        instances=_get(cp, s, "instances", 10, int),
        k=_get(cp, s, "k", 8, int),
        n=_get(cp, s, "n", 16, int),
        tt_values=_get(cp, s, "tt_values", (1, 2, 3, 5, 10, 20, 50, 100, 200, 500), tuple),
        lam=_get(cp, s, "lam", 0.05, float),
        beta=_get(cp, s, "beta", 0.01, float),
        seed=_seed(cp, args),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "prox_bench.csv", BENCH_HEADER,
              [(r.tt_max, r.instance, r.max_err, r.rnn_s, r.oracle_s) for r in rows])
    for tt in sorted({r.tt_max for r in rows}):
        errs = [r.max_err for r in rows if r.tt_max == tt]
        print(f"tt_max={tt:<4d} worst_err={max(errs):.3e}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "equiv-check": cmd_equiv,
    "gradcheck": cmd_gradcheck,
    "prox-bench": cmd_bench,
}


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="detrame", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="config file")
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        sp.add_argument("--out", default="out" if name in ("train", "eval", "prox-bench") else None)
        if name == "eval":
            sp.add_argument("--model", default=None, help="model file (default OUT/model.bin)")
    return p


def run_command(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cp = read_config(args.config)
        return COMMANDS[args.command](args, cp)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (IdxError, ModelFormatError, TrainingDivergence, ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())
