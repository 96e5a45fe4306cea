"""Command-line front end: ``avgraph <command> --model m2 ...``.

Exit codes: 0 success, 1 failed statistical check (``--check``), 2 model or
configuration error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import _kernels as K
from .chain import averaged_drift, project_h
from .config import load_model, model_hash
from .errors import DeltaOutOfRange, ModelError, StepTooLarge
from .fastslow import FastSlowState, SimConfig, monte_carlo_law, simulate_path
from .graph import (limit_law_det, limit_law_diff, make_test_function, simulate_limit_det,
                    simulate_limit_diff)
from .report import ReportTable
from .spectral import alpha_and_projection
from .verify import (convergence_sweep, cycle_diagnostic, martingale_defects,
                     vertex_exit_probabilities)

NOISE_FLOOR = 0.03


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", required=True, help="model file, or fixture name m2 / m3")
    common.add_argument("--seed", type=_u64, default=0)
    common.add_argument("--paths", type=int, default=1000)
    common.add_argument("--eps", type=_floats, default=[1e-3], help="comma-separated list")
    common.add_argument("--T", type=float, default=0.5)
    common.add_argument("--dt", type=float, default=None,
                        help="time step (default eps/10 for fast-slow, 1e-5 for the limit)")
    common.add_argument("--delta", type=_floats, default=[0.05], help="comma-separated list")
    common.add_argument("--out", type=Path, default=None, help="write the report here")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--check", action="store_true",
                        help="exit 1 when the statistical acceptance check fails")
    common.add_argument("--kappa", type=int, choices=(0, 1), default=None,
                        help="slow-motion noise (default: the model's)")
    common.add_argument("--metric", choices=("ks", "w1"), default="ks",
                        help="law distance for sweep: KS + edge-mass TV, or graph 1-Wasserstein")
    common.add_argument("--i0", type=int, default=1, help="initial chain state")
    common.add_argument("--z0", type=float, default=-0.2, help="initial slow coordinate")

    p = argparse.ArgumentParser(prog="avgraph", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in [
        ("validate", "parse and validate a model"),
        ("info", "limit quantities: pi, class masses, branching, vertex drifts"),
        ("simulate", "fast-slow paths (one path: trajectory; more: law of h(X_T))"),
        ("limit", "limit process on the graph"),
        ("sweep", "law distance to the limit over a list of eps"),
        ("spectral", "alpha and projection over a list of delta"),
        ("exitprob", "exit law of the delta-ball from the vertex"),
        ("defect", "martingale defect for three test functions"),
        ("cycles", "vertex-to-sphere cycle counts"),
    ]:
        sub.add_parser(name, parents=[common], help=text, description=text)
    return p


def _provenance(args, model) -> dict:
    keys = ("seed", "paths", "eps", "T", "dt", "delta", "kappa", "i0", "z0")
    flags = " ".join(f"--{k}={getattr(args, k)}" for k in keys)
    return {"command": args.command, "model": model.name or str(args.model),
            "model_hash": model_hash(model), "flags": flags}


def _emit(args, table: ReportTable, summary: list[str]) -> None:
    text = table.render(args.format)
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    for line in summary:
        print(line, file=sys.stderr if args.out is None else sys.stdout)


def _kappa(args, model) -> int:
    return model.kappa if args.kappa is None else args.kappa


def _cmd_validate(args, model):
    t = ReportTable(["key", "value"], provenance=_provenance(args, model))
    t.add("status", "ok")
    t.add("n", model.n)
    t.add("m", model.m)
    for k, v in model.diagnostics.items():
        if isinstance(v, (int, float)):
            t.add(k, v)
    return t, [f"ok: {model.name or args.model} ({model_hash(model)})"]


def _cmd_info(args, model):
    cd = model.class_data
    t = ReportTable(["key", "value"], provenance=_provenance(args, model))
    for i, p in enumerate(cd.pi, start=1):
        t.add(f"pi_{i}", p)
    vb = [float(averaged_drift(model, e, 0.0)) for e in (0, 1, 2)]
    vals = [("pi_bar1", cd.pi_bar1), ("pi_bar2", cd.pi_bar2), ("p1", cd.p1), ("p2", cd.p2),
            ("vbar0_at_O", vb[0]), ("vbar1_at_O", vb[1]), ("vbar2_at_O", vb[2]),
            ("w0", cd.vertex_weights[0]), ("w1", cd.vertex_weights[1]),
            ("w2", cd.vertex_weights[2])]
    for k, v in vals:
        t.add(k, v)
    return t, [f"{k}={v:.6f}" for k, v in vals[:4]]


def _cmd_simulate(args, model):
    eps = args.eps[0]
    x0 = FastSlowState(args.i0, args.z0)
    cfg = SimConfig(epsilon=eps, T=args.T, dt=args.dt, kappa=args.kappa, seed=args.seed,
                    paths=args.paths)
    if args.paths == 1:
        path = simulate_path(model, x0, cfg)
        t = ReportTable(["t", "i", "z"], provenance=_provenance(args, model))
        for row in zip(path.t, path.i, path.z):
            t.add(*row)
        return t, [f"jumps={len(path.jumps)} terminal=({path.terminal.i}, {path.terminal.z:.6f})"]
    law = monte_carlo_law(model, x0, cfg)
    return _law_table(args, model, law)


def _law_table(args, model, law):
    t = ReportTable(["edge", "coord", "weight"], provenance=_provenance(args, model))
    for e, c, w in zip(law.edges, law.coords, law.weights):
        t.add(int(e), c, w)
    mass = law.edge_mass()
    return t, [f"edge_mass=({mass[0]:.4f}, {mass[1]:.4f}, {mass[2]:.4f})"]


def _cmd_limit(args, model):
    y0 = project_h(model, args.i0, args.z0)
    dt = 1e-5 if args.dt is None else args.dt
    if args.paths == 1:
        gp = (simulate_limit_det(model, y0, args.T, args.seed) if _kappa(args, model) == 0
              else simulate_limit_diff(model, y0, args.T, dt, args.seed))
        t = ReportTable(["t", "edge", "coord"], provenance=_provenance(args, model))
        for row in zip(gp.t, gp.edges, gp.coords):
            t.add(*row)
        return t, [f"branches={len(gp.branches)}"]
    law = (limit_law_det(model, y0, args.T, args.paths, args.seed) if _kappa(args, model) == 0
           else limit_law_diff(model, y0, args.T, dt, args.paths, args.seed))
    return _law_table(args, model, law)


def _cmd_sweep(args, model):
    rows = convergence_sweep(model, FastSlowState(args.i0, args.z0), _kappa(args, model), args.T,
                             args.eps, args.paths, args.seed,
                             dt_limit=1e-5 if args.dt is None else args.dt, metric=args.metric)
    t = ReportTable(["epsilon", "paths", "distance", "se"], provenance=_provenance(args, model))
    for r in rows:
        t.add(r.epsilon, r.paths, r.distance, r.se)
    d = [r.distance for r in rows]
    ok = all(a > b for a, b in zip(d, d[1:])) and (args.metric != "ks" or d[-1] <= NOISE_FLOOR)
    summary = [f"eps={r.epsilon:g} distance={r.distance:.4f} runtime={r.runtime:.1f}s"
               for r in rows]
    return t, summary, ok


def _cmd_spectral(args, model):
    t = ReportTable(["delta", "lambda1", "alpha", "pi_proj", "p1", "gap"],
                    provenance=_provenance(args, model))
    summary = []
    for d in args.delta:
        r = alpha_and_projection(model, d)
        t.add(*(r.row()[c] for c in t.columns))
        summary.append(f"delta={d:g} alpha={r.alpha:.6f} pi_proj={r.pi_proj:.6f}")
    return t, summary


def _cmd_exitprob(args, model):
    delta = args.delta[0]
    rep = vertex_exit_probabilities(model, args.eps[0], delta, args.paths, args.seed, dt=args.dt)
    t = ReportTable(["start", "p_minus", "p_plus_R1", "p_plus_R2", "se_minus", "se_plus_R1",
                     "se_plus_R2"], provenance=_provenance(args, model))
    for i in range(model.n):
        t.add(str(i + 1), *rep.per_start[i], *rep.per_start_se[i])
    t.add("pooled", *rep.pooled, *rep.pooled_se)
    t.add("target", *rep.target, 0.0, 0.0, 0.0)
    summary = [f"pooled=({', '.join(f'{x:.4f}' for x in rep.pooled)}) "
               f"target=({', '.join(f'{x:.4f}' for x in rep.target)})"]
    return t, summary, rep.within(3.0)


def default_test_functions(model):
    return [make_test_function(model, (1.0, 0.0), 0.0, label="slopes(1,0)"),
            make_test_function(model, (0.0, 1.0), 0.5, label="slopes(0,1)"),
            make_test_function(model, (1.0, 1.0), -1.0, value=1.0, label="slopes(1,1)")]


def _cmd_defect(args, model):
    fs = default_test_functions(model)
    x0 = FastSlowState(args.i0, args.z0)
    t = ReportTable(["label", "epsilon", "mean", "se"], provenance=_provenance(args, model))
    results = {}
    for eps in args.eps:
        results[eps] = martingale_defects(model, fs, x0, eps, args.T, args.paths, args.seed,
                                          dt=args.dt)
        for d in results[eps]:
            t.add(d.label, d.epsilon, d.mean, d.se)
    ok = all(abs(d.mean) <= 3 * d.se for d in results[min(args.eps)])
    return t, [f"{r[0]} eps={r[1]:g} mean={r[2]:.5f} se={r[3]:.5f}" for r in t.rows], ok


def _cmd_cycles(args, model):
    rep = cycle_diagnostic(model, FastSlowState(args.i0, args.z0), args.eps[0], args.delta[0],
                           args.T, args.paths, args.seed, dt=args.dt)
    t = ReportTable(["n", "tail"], provenance=_provenance(args, model))
    for n, p in enumerate(rep.tail):
        t.add(n, p)
    return t, [f"mean={rep.mean:.4f} slope={rep.slope:.4f}"], bool(rep.slope < 0)


COMMANDS = {
    "validate": _cmd_validate, "info": _cmd_info, "simulate": _cmd_simulate,
    "limit": _cmd_limit, "sweep": _cmd_sweep, "spectral": _cmd_spectral,
    "exitprob": _cmd_exitprob, "defect": _cmd_defect, "cycles": _cmd_cycles,
}


def run_command(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    K.set_threads()
    try:
        model = load_model(args.model)
        out = COMMANDS[args.command](args, model)
    except (ModelError, StepTooLarge, DeltaOutOfRange) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    table, summary, *rest = out
    _emit(args, table, summary)
    if args.check and rest and not rest[0]:
        print("check: FAIL", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
