"""How fast does the unrolled recurrence approach the exact prox?

Compares diagonally dominant metrics (where the Jacobi-style update contracts)
with metrics built from random dictionaries (no guarantee).
"""
import argparse

import numpy as np

from detrame.checks import diag_dominant_metric, random_dictionary
from detrame.core import Regularizer, metric_from_dictionary
from detrame.qprox import ProxProblem, qprox_oracle, qprox_rnn, reparameterize


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    rng = np.random.default_rng(args.seed)
    reg = Regularizer(0.05, 0.01)
    tts = [1, 2, 3, 5, 10, 50, 200]
    families = {
        "diag-dominant": lambda: diag_dominant_metric(rng, args.k),
        "dictionary": lambda: metric_from_dictionary(random_dictionary(rng, max(args.k - 4, 1), args.k, 0.1)),
    }
    print("family         " + " ".join(f"tt={t:<7d}" for t in tts))
    for name, make in families.items():
        errs = np.zeros((args.instances, len(tts)))
        for i in range(args.instances):
            Q = make()
            prob = ProxProblem(rng.standard_normal((args.k, 4)), Q, reg)
            ref = qprox_oracle(prob, 1e-11).U
            for j, tt in enumerate(tts):
                U = qprox_rnn(prob, reparameterize(Q, reg, tt))
                errs[i, j] = np.max(np.abs(U - ref))
        print(f"{name:<14s} " + " ".join(f"{e:<10.2e}" for e in np.median(errs, axis=0)))


if __name__ == "__main__":
    main()
