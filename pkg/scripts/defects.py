"""Martingale defect of three domain test functions over eps, and for the limit simulator."""
import argparse

from avgraph.chain import project_h
from avgraph.cli import default_test_functions
from avgraph.config import load_model
from avgraph.fastslow import FastSlowState
from avgraph.verify import limit_defects, martingale_defects


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="m2")
    ap.add_argument("--eps", type=float, nargs="+", default=[1e-1, 1e-2, 1e-3, 1e-4])
    ap.add_argument("--paths", type=int, default=10**4)
    ap.add_argument("--T", type=float, default=0.5)
    ap.add_argument("--z0", type=float, default=-0.1)
    ap.add_argument("--limit-dt", type=float, default=1e-5)
    ap.add_argument("--seed", type=int, default=1)
    a = ap.parse_args()
    model = load_model(a.model)
    fs = default_test_functions(model)
    print("source,label,mean,se,ratio")
    for eps in a.eps:
        for d in martingale_defects(model, fs, FastSlowState(1, a.z0), eps, a.T, a.paths,
                                    a.seed):
            print(f"eps={eps:g},{d.label},{d.mean:+.5f},{d.se:.5f},{abs(d.mean) / d.se:.2f}")
    y0 = project_h(model, 1, a.z0)
    for d in limit_defects(model, fs, y0, a.T, a.limit_dt, a.paths, a.seed):
        print(f"limit dt={a.limit_dt:g},{d.label},{d.mean:+.5f},{d.se:.5f},"
              f"{abs(d.mean) / d.se:.2f}")


if __name__ == "__main__":
    main()
