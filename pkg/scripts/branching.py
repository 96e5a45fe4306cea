"""Class of the chain at the first hit of z = level (kappa = 0) against p1, over eps."""
import argparse
import time

import numpy as np

from avgraph.config import load_model
from avgraph.fastslow import FastSlowState, SimConfig, first_passage_classes


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="m2")
    ap.add_argument("--eps", type=float, nargs="+", default=[1e-1, 1e-2, 1e-3, 1e-4])
    ap.add_argument("--paths", type=int, default=2 * 10**4)
    ap.add_argument("--z0", type=float, default=-0.5)
    ap.add_argument("--level", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=1)
    a = ap.parse_args()
    model = load_model(a.model)
    p1 = model.class_data.p1
    print(f"# p1 = {p1:.6f}")
    print("eps,fraction_R1,se,error,runtime_s")
    for eps in a.eps:
        t0 = time.perf_counter()
        cfg = SimConfig(epsilon=eps, T=10.0, kappa=0, seed=a.seed, paths=a.paths)
        cls, missed = first_passage_classes(model, FastSlowState(1, a.z0), cfg, a.level)
        frac = (cls == 1).sum() / max(a.paths - missed, 1)
        se = np.sqrt(frac * (1 - frac) / a.paths)
        print(f"{eps:g},{frac:.4f},{se:.4f},{frac - p1:+.4f},{time.perf_counter() - t0:.1f}")


if __name__ == "__main__":
    main()
