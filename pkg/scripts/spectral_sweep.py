"""alpha, the projection Pi and the f_eps profile over delta; compare with p1."""
import argparse

import numpy as np

from avgraph.config import load_model
from avgraph.spectral import alpha_and_projection, f_epsilon_profile


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="m3")
    ap.add_argument("--delta", type=float, nargs="+", default=[1e-1, 3e-2, 1e-2, 3e-3, 1e-3])
    ap.add_argument("--eps", type=float, nargs="+", default=[1e-4, 1e-5])
    a = ap.parse_args()
    model = load_model(a.model)
    p1 = model.class_data.p1
    print(f"# p1 = {p1:.10f}")
    cols = ["delta", "lambda1", "alpha", "pi_proj", "minus_inv_alpha", "pi_minus_p1"]
    cols += [f"profile_eps{e:g}_minus_p1" for e in a.eps]
    print(",".join(cols))
    for d in a.delta:
        r = alpha_and_projection(model, d)
        row = [d, r.lambda1, r.alpha, r.pi_proj, -1 / r.alpha, r.pi_proj - p1]
        for e in a.eps:
            try:
                row.append(float(np.abs(f_epsilon_profile(model, d, e) - p1).max()))
            except Exception as exc:  # grid refinement can hit its cap for tiny eps/delta
                print(f"# delta={d:g} eps={e:g}: {type(exc).__name__}")
                row.append(float("nan"))
        print(",".join(f"{x:.6g}" for x in row))


if __name__ == "__main__":
    main()
