"""Exit law of the delta-ball from the vertex: fast-slow process against the limit.

Prints per-start and pooled frequencies, the exact exit law of the drifted limit
diffusion, and the per-start class bias as eps shrinks.
"""
import argparse

import numpy as np

from avgraph.config import family_from_dict, family_to_dict, load_model
from avgraph.chain import validate_model
from avgraph.graph import limit_exit_probabilities
from avgraph.verify import vertex_exit_probabilities


def as_diffusive(model):
    doc = family_to_dict(model)
    doc["meta"]["kappa"] = 1
    return validate_model(family_from_dict(doc))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", default="m2")
    ap.add_argument("--delta", type=float, default=0.05)
    ap.add_argument("--eps", type=float, nargs="+", default=[1e-3, 1e-4, 1e-5])
    ap.add_argument("--paths", type=int, default=10**4)
    ap.add_argument("--seed", type=int, default=1)
    a = ap.parse_args()
    model = as_diffusive(load_model(a.model))
    exact = limit_exit_probabilities(model, a.delta)
    print(f"# vertex weights {np.round(model.class_data.vertex_weights, 4).tolist()}")
    print(f"# drifted limit exit law at delta={a.delta}: {np.round(exact, 4).tolist()}")
    print("eps,start,p_minus,p_plus_R1,p_plus_R2,se_max")
    for eps in a.eps:
        rep = vertex_exit_probabilities(model, eps, a.delta, a.paths, a.seed)
        for i in range(model.n):
            row = rep.per_start[i]
            print(f"{eps:g},{i + 1},{row[0]:.4f},{row[1]:.4f},{row[2]:.4f},"
                  f"{rep.per_start_se[i].max():.4f}")
        print(f"{eps:g},pooled,{rep.pooled[0]:.4f},{rep.pooled[1]:.4f},{rep.pooled[2]:.4f},"
              f"{rep.pooled_se.max():.4f}")


if __name__ == "__main__":
    main()
