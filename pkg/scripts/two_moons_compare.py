"""Q-Metric vs ReLU on two moons, sweeping the number of unrolled steps.

    python scripts/two_moons_compare.py --seeds 5 --tt 1 2 3 5
"""
import argparse
import time

import numpy as np

from detrame.data import gen_two_moons, standardize
from detrame.net import build_mlp
from detrame.train import TrainConfig, train_loop


def run(activation, tt, seed, args):
    tr = gen_two_moons(args.n, args.noise, seed=1000 + seed)
    te = gen_two_moons(args.n, args.noise, seed=2000 + seed, split="test")
    _, _, Xtr, (Xte,) = standardize(tr.X, te.X)
    model = build_mlp(2, args.hidden, 2, activation, tt_max=tt, seed=seed)
    cfg = TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=32, decay_epochs=(int(0.8 * args.epochs),), seed=seed)
    return train_loop(model, (Xtr, tr.y), (Xte, te.y), cfg).records[-1].test_acc


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--tt", type=int, nargs="+", default=[1, 2, 3, 5])
    p.add_argument("--hidden", type=int, nargs="+", default=[16, 16])
    p.add_argument("--n", type=int, default=250, help="points per class")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.1)
    args = p.parse_args()

    t0 = time.time()
    base = [run("relu", 1, s, args) for s in range(args.seeds)]
    print(f"relu         acc {np.mean(base):.4f} +- {np.std(base):.4f}")
    for tt in args.tt:
        accs = [run("qmetric", tt, s, args) for s in range(args.seeds)]
        print(f"qmetric tt={tt:<3d} acc {np.mean(accs):.4f} +- {np.std(accs):.4f}")
    print(f"{time.time() - t0:.1f}s")


if __name__ == "__main__":
    main()
