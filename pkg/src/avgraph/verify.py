"""Statistical checks tying the simulators to the limit theorems."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from .chain import ChainFamily, GraphPoint, project_h, project_h_array
from .errors import EmptyLaw
from .fastslow import (EmpiricalLaw, FastSlowState, SimConfig, exit_counts, run_ensemble)
from .graph import TestFunction, limit_diff_ensemble, limit_law_det

CHUNK = 2000


# --------------------------------------------------------------------------
# law distance


def law_distance(a: EmpiricalLaw, b: EmpiricalLaw, metric: str = "ks") -> float:
    """Max of the edge-mass total variation and the per-edge KS statistics of
    the coordinate, each weighted by the smaller of the two edge masses.

    ``metric="w1"`` gives the 1-Wasserstein distance for ``graph_distance`` instead.
    """
    if a.count == 0 or b.count == 0:
        raise EmptyLaw("law_distance needs non-empty laws")
    if metric == "w1":
        return wasserstein_graph(a, b)
    if metric != "ks":
        raise ValueError(f"unknown metric {metric!r}")
    ma, mb = a.edge_mass(), b.edge_mass()
    dist = 0.5 * float(np.abs(ma - mb).sum())
    for e in (0, 1, 2):
        xa = a.coords[a.edges == e]
        xb = b.coords[b.edges == e]
        if xa.size and xb.size:
            ks = scipy.stats.ks_2samp(xa, xb).statistic
            dist = max(dist, min(ma[e], mb[e]) * float(ks))
    return dist


def wasserstein_graph(a: EmpiricalLaw, b: EmpiricalLaw) -> float:
    """Exact W1 on the star graph: sum over edges of ``int |A_l(x) - B_l(x)| dx``
    with ``A_l(x)`` the mass of ``a`` on edge ``l`` beyond distance ``x`` from O."""
    total = 0.0
    for e in (1, 2, 0):
        da = np.abs(a.coords[(a.edges == e) & (a.coords != 0)])
        db = np.abs(b.coords[(b.edges == e) & (b.coords != 0)])
        x = np.unique(np.concatenate([[0.0], da, db]))
        A = (da.size - np.searchsorted(np.sort(da), x[:-1], side="right")) / a.count
        B = (db.size - np.searchsorted(np.sort(db), x[:-1], side="right")) / b.count
        total += float(np.sum(np.abs(A - B) * np.diff(x)))
    return total


def _bootstrap_se(a: EmpiricalLaw, b: EmpiricalLaw, reps: int, seed: int,
                  metric: str = "ks") -> float:
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(reps):
        ia = rng.integers(0, a.count, a.count)
        ib = rng.integers(0, b.count, b.count)
        vals.append(law_distance(EmpiricalLaw(a.edges[ia], a.coords[ia], a.T),
                                 EmpiricalLaw(b.edges[ib], b.coords[ib], b.T), metric))
    return float(np.std(vals, ddof=1))


@dataclass
class ConvergenceRow:
    epsilon: float
    paths: int
    distance: float
    se: float
    runtime: float = field(default=0.0, compare=False)
    per_time: tuple = ()
    mass: tuple = ()  # edge masses of h(X^eps_T)


def _limit_laws(model: ChainFamily, y0: GraphPoint, kappa: int, times, paths: int, seed: int,
                dt_limit: float) -> list[EmpiricalLaw]:
    T = times[-1]
    if kappa == 0:
        return [limit_law_det(model, y0, t, paths, seed, stream0=paths) for t in times]
    ens = limit_diff_ensemble(model, y0, T, dt_limit, paths, seed, out_dt=T / 2, record=True,
                              stream0=paths)
    out = []
    for t in times:
        k = int(round(t / (T / 2)))
        c = ens.grid_z[:, k]
        e = np.where(c == 0, 0, ens.grid_e[:, k])
        out.append(EmpiricalLaw(e, c, t))
    return out


def convergence_sweep(model: ChainFamily, x0: FastSlowState, kappa: int, T: float, eps_list,
                      paths: int, seed: int = 0, *, dt_limit: float = 1e-5,
                      bootstrap: int = 20, metric: str = "ks") -> list[ConvergenceRow]:
    """Distance between the laws of ``h(X^eps)`` and of the limit process at
    ``T/2`` and ``T`` (the reported distance is the larger one); rows are
    ordered by ``eps`` descending.  Fast-slow paths use streams ``0..paths-1``,
    the limit process streams ``paths..2 paths-1``."""
    times = (T / 2, T)
    y0 = project_h(model, x0.i, x0.z)
    limit = _limit_laws(model, y0, kappa, times, paths, seed, dt_limit)
    rows = []
    for eps in sorted(map(float, eps_list), reverse=True):
        t0 = time.perf_counter()
        cfg = SimConfig(epsilon=eps, T=T, kappa=kappa, seed=seed, paths=paths, out_dt=T / 2)
        ens = run_ensemble(model, x0.i, x0.z, cfg, record=True)
        dists, ses = [], []
        for k, t in enumerate(times, start=1):
            e, c = project_h_array(model, ens.grid_i[:, k], ens.grid_z[:, k])
            law = EmpiricalLaw(e, c, t)
            dists.append(law_distance(law, limit[k - 1], metric))
            ses.append(_bootstrap_se(law, limit[k - 1], bootstrap, seed + k, metric))
        j = int(np.argmax(dists))
        rows.append(ConvergenceRow(eps, paths, dists[j], ses[j], time.perf_counter() - t0,
                                   tuple(dists), tuple(law.edge_mass().tolist())))
    return rows


def self_distance(model: ChainFamily, y0: GraphPoint, T: float, paths: int, seed: int = 0, *,
                  dt: float = 1e-4) -> float:
    """Distance between two independent samples of the kappa = 1 limit law."""
    a = limit_diff_ensemble(model, y0, T, dt, paths, seed, stream0=0)
    b = limit_diff_ensemble(model, y0, T, dt, paths, seed, stream0=paths)
    return law_distance(EmpiricalLaw(a.edges, a.coords, T), EmpiricalLaw(b.edges, b.coords, T))


# --------------------------------------------------------------------------
# martingale defect


@dataclass
class DefectEstimate:
    mean: float
    se: float
    epsilon: float
    label: str
    T: float
    paths: int


def _defect_samples(f: TestFunction, e: np.ndarray, c: np.ndarray, h: float) -> np.ndarray:
    g = f.generator(e, c)
    integral = h * (g.sum(axis=1) - 0.5 * (g[:, 0] + g[:, -1]))
    return f(e[:, -1], c[:, -1]) - f(e[:, 0], c[:, 0]) - integral


def _summarize(samples: np.ndarray, eps: float, label: str, T: float) -> DefectEstimate:
    P = samples.size
    se = float(samples.std(ddof=1) / np.sqrt(P)) if P > 1 else 0.0
    return DefectEstimate(float(samples.mean()), se, eps, label, T, P)


def martingale_defects(model: ChainFamily, fs: list[TestFunction], x0: FastSlowState,
                       epsilon: float, T: float, paths: int, seed: int = 0, *,
                       out_dt: float = 1e-4, dt: float | None = None) -> list[DefectEstimate]:
    """``E[f(Y_T) - f(Y_0) - int_0^T Af(Y_t) dt]`` for ``Y = h(X^eps)``, all test
    functions evaluated on the same paths (time integral by the trapezoid rule on
    the ``out_dt`` grid)."""
    samples = [np.empty(paths) for _ in fs]
    for lo in range(0, paths, CHUNK):
        P = min(CHUNK, paths - lo)
        cfg = SimConfig(epsilon=epsilon, T=T, dt=dt, kappa=1, seed=seed, paths=P, out_dt=out_dt)
        ens = run_ensemble(model, x0.i, x0.z, cfg, record=True, stream0=lo)
        e, c = project_h_array(model, ens.grid_i, ens.grid_z)
        for s, f in zip(samples, fs):
            s[lo:lo + P] = _defect_samples(f, e.astype(np.int64), c, out_dt)
    return [_summarize(s, epsilon, f.label, T) for s, f in zip(samples, fs)]


def martingale_defect(model: ChainFamily, f: TestFunction, x0: FastSlowState, epsilon: float,
                      T: float, paths: int, seed: int = 0, **kw) -> DefectEstimate:
    return martingale_defects(model, [f], x0, epsilon, T, paths, seed, **kw)[0]


def limit_defects(model: ChainFamily, fs: list[TestFunction], y0: GraphPoint, T: float,
                  dt: float, paths: int, seed: int = 0, *,
                  out_dt: float = 1e-4) -> list[DefectEstimate]:
    """Martingale defect of the kappa = 1 limit simulator against its own generator."""
    samples = [np.empty(paths) for _ in fs]
    for lo in range(0, paths, CHUNK):
        P = min(CHUNK, paths - lo)
        ens = limit_diff_ensemble(model, y0, T, dt, P, seed, out_dt=out_dt, record=True,
                                  stream0=lo)
        e = np.where(ens.grid_z == 0, 0, ens.grid_e)
        for s, f in zip(samples, fs):
            s[lo:lo + P] = _defect_samples(f, e, ens.grid_z, out_dt)
    return [_summarize(s, 0.0, f.label, T) for s, f in zip(samples, fs)]


# --------------------------------------------------------------------------
# exit probabilities from the vertex


@dataclass
class VertexExitReport:
    """Rows of ``per_start`` are ``(P(-delta), P(+delta, R1), P(+delta, R2))`` from ``(i, 0)``."""

    epsilon: float
    delta: float
    per_start: np.ndarray
    per_start_se: np.ndarray
    pooled: np.ndarray
    pooled_se: np.ndarray
    target: np.ndarray
    paths: int
    exceeded: int

    def within(self, k: float = 3.0, pooled: bool = False) -> bool:
        if pooled:
            return bool(np.all(np.abs(self.pooled - self.target) <= k * self.pooled_se))
        return bool(np.all(np.abs(self.per_start - self.target) <= k * self.per_start_se))


def vertex_exit_probabilities(model: ChainFamily, epsilon: float, delta: float, paths: int,
                              seed: int = 0, *, dt: float | None = None,
                              cap: float = 10.0) -> VertexExitReport:
    """Exit law of the ball ``|z| < delta`` from each ``(i, 0)``, ``paths`` runs per start."""
    n = model.n
    per, se = np.zeros((n, 3)), np.zeros((n, 3))
    counts = np.zeros(3)
    done = 0
    exceeded = 0
    for i in range(1, n + 1):
        cfg = SimConfig(epsilon=epsilon, T=cap, dt=dt, kappa=1, seed=seed, paths=paths)
        ec = exit_counts(model, FastSlowState(i, 0.0), cfg, delta, stream0=(i - 1) * paths)
        per[i - 1], se[i - 1] = ec.freqs, ec.stderr()
        counts += ec.counts
        done += paths - ec.exceeded
        exceeded += ec.exceeded
    pooled = counts / max(done, 1)
    pooled_se = np.sqrt(pooled * (1 - pooled) / max(done, 1))
    return VertexExitReport(epsilon, delta, per, se, pooled, pooled_se,
                            np.array(model.class_data.vertex_weights), paths, exceeded)


# --------------------------------------------------------------------------
# cycles between the vertex and the delta-sphere


@dataclass
class CycleReport:
    counts: np.ndarray
    tail: np.ndarray  # tail[n] = P(count >= n)
    slope: float
    mean: float


def cycle_diagnostic(model: ChainFamily, x0: FastSlowState, epsilon: float, delta: float,
                     T: float, paths: int, seed: int = 0, *, dt: float | None = None,
                     min_count: int = 10) -> CycleReport:
    """Counts of completed cycles (reach 0, then ``|z| = delta``) by time ``T``,
    their empirical tail and its log-linear slope (fitted where at least
    ``min_count`` paths contribute)."""
    cfg = SimConfig(epsilon=epsilon, T=T, dt=dt, kappa=1, seed=seed, paths=paths)
    ens = run_ensemble(model, x0.i, x0.z, cfg, cycle_delta=delta)
    counts = ens.cycles
    top = int(counts.max()) if counts.size else 0
    tail = np.array([(counts >= n).mean() for n in range(top + 2)])
    use = np.nonzero(tail * paths >= min_count)[0]
    slope = float(np.polyfit(use, np.log(tail[use]), 1)[0]) if use.size >= 2 else float("nan")
    return CycleReport(counts, tail, slope, float(counts.mean()))


__all__ = [
    "law_distance", "wasserstein_graph", "ConvergenceRow", "convergence_sweep", "self_distance", "DefectEstimate",
    "martingale_defect", "martingale_defects", "limit_defects", "VertexExitReport",
    "vertex_exit_probabilities", "CycleReport", "cycle_diagnostic",
]
