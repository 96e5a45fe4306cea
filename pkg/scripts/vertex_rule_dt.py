"""Walsh-rule exit frequencies of the kappa = 1 limit simulator against dt.

With zero drift the three edges carry identical dynamics, so the exit edge is
the last emission choice and the scheme is unbiased for every dt.  With the
model drift the exact exit law is known in closed form, and the dt bias shows.
"""
import argparse

import numpy as np

from avgraph.chain import VERTEX
from avgraph.config import load_model
from avgraph.graph import DriftTable, limit_diff_ensemble, limit_exit_probabilities


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", default="m2")
    ap.add_argument("--delta", type=float, default=0.05)
    ap.add_argument("--dt", type=float, nargs="+", default=[1e-3, 1e-4, 1e-5, 1e-6])
    ap.add_argument("--paths", type=int, default=10**5)
    ap.add_argument("--seed", type=int, default=1)
    a = ap.parse_args()
    model = load_model(a.model)
    print("drift,dt,p0,p1,p2,target0,target1,target2,max_error,se")
    for label, table in (("zero", DriftTable.zero(model.C)), ("model", None)):
        target = (np.array(model.class_data.vertex_weights) if table is not None
                  else limit_exit_probabilities(model, a.delta))
        se = float(np.sqrt(target * (1 - target) / a.paths).max())
        for dt in a.dt:
            ens = limit_diff_ensemble(model, VERTEX, 50.0, dt, a.paths, a.seed,
                                      exit_radius=a.delta, table=table)
            f = np.bincount(ens.edges, minlength=3) / a.paths
            err = np.abs(f - target).max()
            print(f"{label},{dt:g}," + ",".join(f"{x:.4f}" for x in (*f, *target))
                  + f",{err:.4f},{se:.4f}")


if __name__ == "__main__":
    main()
