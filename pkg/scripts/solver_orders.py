"""Empirical convergence order of each integrator on y' = -y."""
import argparse

import numpy as np

from gridwave.solvers import METHODS, SemiExplicitDAE, convergence_order


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--h0", type=float, default=0.1)
    ap.add_argument("--halvings", type=int, default=4)
    args = ap.parse_args()
    prob = SemiExplicitDAE(lambda t, x: -x, np.ones(1), np.ones(1))
    for m in METHODS:
        p = convergence_order(m, prob, lambda t: np.exp(-t) * np.ones(1),
                              h0=args.h0, halvings=args.halvings)
        print(f"{m:<16}{p:8.4f}")


if __name__ == "__main__":
    main()
