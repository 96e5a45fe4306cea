"""Limit processes on the three-edge graph and generator-domain test functions.

Coordinates are signed: edge 0 carries ``z <= 0``, edges 1 and 2 carry
``z >= 0``.  Internally the simulators work with the distance ``d = |z|`` to
the vertex O.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .chain import ChainFamily, GraphPoint, averaged_drift
from .fastslow import EmpiricalLaw, _grid_size, _stream, fmt

TABLE_STEP = 1e-3
_EV_CAP = 4096


# --------------------------------------------------------------------------
# averaged drift tables


@dataclass(frozen=True)
class DriftTable:
    """``vbar_l`` sampled at distances ``d = k * span / K`` from O, per edge.

    Beyond ``span`` (= C) every drift equals ``vinf``.
    """

    values: np.ndarray  # shape (3, K + 1), indexed by distance
    span: float
    vinf: float

    def __call__(self, edge, z):
        edge, d = np.broadcast_arrays(np.asarray(edge), np.abs(np.asarray(z, dtype=float)))
        grid = np.linspace(0.0, self.span, self.values.shape[1])
        out = np.full(d.shape, self.vinf)
        for e in (0, 1, 2):
            sel = (edge == e) & (d < self.span)
            out[sel] = np.interp(d[sel], grid, self.values[e])
        return out if out.ndim else float(out)

    @classmethod
    def zero(cls, span: float = 1.0) -> "DriftTable":
        return cls(np.zeros((3, 2)), span, 0.0)


def _build_table(model: ChainFamily) -> DriftTable:
    K_ = max(int(round(model.C / TABLE_STEP)), 1)
    d = np.linspace(0.0, model.C, K_ + 1)
    vals = np.empty((3, K_ + 1))
    vals[0] = averaged_drift(model, 0, -d)
    vals[1] = averaged_drift(model, 1, d)
    vals[2] = averaged_drift(model, 2, d)
    return DriftTable(vals, float(model.C), float(model.vinf))


def drift_table(model: ChainFamily) -> DriftTable:
    """Cached per model instance (frozen dataclass, so stored in its ``__dict__``)."""
    cache = model.__dict__
    if "_drift_table" not in cache:
        cache["_drift_table"] = _build_table(model)
    return cache["_drift_table"]


def _weights(model: ChainFamily, weights=None) -> np.ndarray:
    w = model.class_data.vertex_weights if weights is None else weights
    w = np.asarray(w, dtype=float)
    if w.shape != (3,) or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
        raise ValueError(f"vertex weights must be a probability triple, got {w}")
    return w


# --------------------------------------------------------------------------
# paths


@dataclass
class GraphPath:
    """Samples ``(t, edge, coord)`` on a uniform grid plus branching events at O."""

    t: np.ndarray
    edges: np.ndarray
    coords: np.ndarray
    branches: list[tuple[float, int]] = field(default_factory=list)

    @property
    def terminal(self) -> GraphPoint:
        return GraphPoint(int(self.edges[-1]), float(self.coords[-1]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,edge,coord\n")
        for t, e, c in zip(self.t, self.edges, self.coords):
            buf.write(f"{fmt(t)},{int(e)},{fmt(c)}\n")
        for t, e in self.branches:
            buf.write(f"# branch,{fmt(t)},{int(e)}\n")
        return buf.getvalue()


def _rk4_edge(table: DriftTable, edge: int, z: float, h: float) -> float:
    f = lambda x: table(edge, x)  # noqa: E731
    k1 = f(z)
    k2 = f(z + 0.5 * h * k1)
    k3 = f(z + 0.5 * h * k2)
    k4 = f(z + h * k3)
    return z + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6


def _flow(table: DriftTable, edge: int, z: float, duration: float, h: float):
    """RK4 along one edge for ``duration``; on edge 0 stop on reaching O.

    Returns ``(z, elapsed, hit)``.
    """
    t = 0.0
    while duration - t > 1e-14:
        step = min(h, duration - t)
        z1 = _rk4_edge(table, edge, z, step)
        if edge == 0 and z1 >= 0.0:
            theta = -z / (z1 - z) if z1 > z else 0.0
            return 0.0, t + theta * step, True
        z, t = z1, t + step
    return z, duration, False


def _det_branches(model: ChainFamily, y0: GraphPoint, T: float, out_dt: float, dt: float):
    """Deterministic motion, continued along both upper edges after reaching O.

    Returns the time grid, ``{edge: (edges, coords)}`` (one entry if O is never
    reached, else one per branch) and the arrival time at O.
    """
    table = drift_table(model)
    G = _grid_size(T, out_dt)
    tg = out_dt * np.arange(G)
    h = out_dt / max(int(np.ceil(out_dt / dt - 1e-9)), 1)
    c = np.zeros(G)
    c[0] = z = y0.coord
    edge = y0.edge
    t_hit, k_hit = np.inf, G
    for k in range(1, G):
        z, el, hit = _flow(table, edge, z, out_dt, h)
        if hit:
            t_hit, k_hit = tg[k - 1] + el, k
            break
        c[k] = z
    if not np.isfinite(t_hit):
        return tg, {edge: (np.full(G, edge, dtype=np.int64), c)}, t_hit
    out = {}
    for b in (1, 2):
        cb = c.copy()
        eb = np.zeros(G, dtype=np.int64)
        eb[:k_hit] = edge
        z, t = 0.0, t_hit
        for k in range(k_hit, G):
            z, _, _ = _flow(table, b, z, tg[k] - t, h)
            t = tg[k]
            cb[k] = z
            eb[k] = b if z > 0 else 0
        out[b] = (eb, cb)
    return tg, out, t_hit


def simulate_limit_det(model: ChainFamily, y0: GraphPoint, T: float, rng=None, *,
                       out_dt: float | None = None, dt: float = 1e-3) -> GraphPath:
    """kappa = 0 limit: ``dz = vbar_l(z) dt`` on the edges, one branch at O."""
    out_dt = T / 1000 if out_dt is None else out_dt
    tg, legs, t_hit = _det_branches(model, y0, T, out_dt, dt)
    if not np.isfinite(t_hit):
        (e, c), = legs.values()
        return GraphPath(tg, e, c)
    s = _stream(rng)
    u = K.stream_uniforms(s.useed, s.index, 1)[0]
    b = 1 if u < model.class_data.p1 else 2
    e, c = legs[b]
    return GraphPath(tg, e, c, [(float(t_hit), b)])


def limit_law_det(model: ChainFamily, y0: GraphPoint, T: float, paths: int, seed: int = 0,
                  *, dt: float = 1e-3, stream0: int = 0) -> EmpiricalLaw:
    """Law at time ``T`` of the kappa = 0 limit; path ``p`` draws its branch from stream ``p``."""
    tg, legs, t_hit = _det_branches(model, y0, T, T, dt)
    if not np.isfinite(t_hit):
        (e, c), = legs.values()
        return EmpiricalLaw(np.full(paths, e[-1]), np.full(paths, c[-1]), T)
    u = K.stream_uniforms(np.uint64(seed % 2**64), stream0, paths)
    b = np.where(u < model.class_data.p1, 1, 2)
    e = np.where(b == 1, legs[1][0][-1], legs[2][0][-1])
    c = np.where(b == 1, legs[1][1][-1], legs[2][1][-1])
    return EmpiricalLaw(e, c, T)


def _start(y0: GraphPoint) -> tuple[int, float]:
    return int(y0.edge), abs(float(y0.coord))


def simulate_limit_diff(model: ChainFamily, y0: GraphPoint, T: float, dt: float, rng=None, *,
                        out_dt: float | None = None, table: DriftTable | None = None,
                        weights=None) -> GraphPath:
    """kappa = 1 limit: Euler-Maruyama on the edges with the Walsh rule at O."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    out_dt = T / 1000 if out_dt is None else out_dt
    G = _grid_size(T, out_dt)
    tab = drift_table(model) if table is None else table
    w = _weights(model, weights)
    s = _stream(rng)
    e0, d0 = _start(y0)
    cap = _EV_CAP
    while True:
        res, rec_e, rec_z, ev = K.graph_single(tab.values, tab.span, tab.vinf, w, e0, d0, T, dt,
                                               out_dt, np.inf, s.useed, s.index, cap, G)
        if res[4] <= cap:
            break
        cap = int(res[4])
    br = [(float(t), int(e)) for t, e in ev[: int(res[4])]]
    return GraphPath(out_dt * np.arange(G), rec_e.astype(np.int64), rec_z, br)


@dataclass
class GraphEnsemble:
    t: np.ndarray
    edges: np.ndarray
    coords: np.ndarray
    status: np.ndarray
    emissions: np.ndarray
    grid_e: np.ndarray | None = None
    grid_z: np.ndarray | None = None


def limit_diff_ensemble(model: ChainFamily | None, y0: GraphPoint, T: float, dt: float,
                        paths: int, seed: int = 0, *, out_dt: float | None = None,
                        record: bool = False, exit_radius: float = np.inf,
                        table: DriftTable | None = None, weights=None,
                        stream0: int = 0) -> GraphEnsemble:
    """Batch of kappa = 1 limit paths; ``table``/``weights`` override the model's."""
    K.set_threads()
    tab = drift_table(model) if table is None else table
    w = _weights(model, weights)
    e0, d0 = _start(y0)
    if record:
        out_dt = T / 1000 if out_dt is None else out_dt
        G = _grid_size(T, out_dt)
    else:
        out_dt, G = 0.0, 0
    rec_e = np.zeros((paths, G), np.int8)
    rec_z = np.zeros((paths, G))
    t, e, d, st, em = K.graph_ensemble(
        tab.values, tab.span, tab.vinf, w, np.full(paths, e0, np.int64), np.full(paths, d0),
        T, dt, out_dt, float(exit_radius), np.uint64(seed % 2**64), stream0, rec_e, rec_z)
    coords = np.where(e == 0, -d, d)
    e = np.where(d == 0, 0, e)
    return GraphEnsemble(t, e, coords, st, em,
                         rec_e.astype(np.int64) if record else None, rec_z if record else None)


def limit_law_diff(model: ChainFamily, y0: GraphPoint, T: float, dt: float, paths: int,
                   seed: int = 0, *, stream0: int = 0) -> EmpiricalLaw:
    ens = limit_diff_ensemble(model, y0, T, dt, paths, seed, stream0=stream0)
    return EmpiricalLaw(ens.edges, ens.coords, T)


def line_law(model: ChainFamily, z0: float, T: float, dt: float, paths: int, seed: int = 0,
             *, stream0: int = 0) -> np.ndarray:
    """Terminal values of ``dz = vbar(z) dt + dW`` on the line, ``vbar`` = edge-0 drift
    for ``z < 0`` and edge-1 drift for ``z >= 0``.  Oracle for the folded graph process
    when the two upper drifts coincide."""
    tab = drift_table(model)
    grid = np.linspace(0.0, tab.span, tab.values.shape[1])
    xs = np.concatenate([-grid[::-1], grid[1:]])
    vs = np.concatenate([tab.values[0][::-1], tab.values[1][1:]])
    K.set_threads()
    return K.line_ensemble(xs, vs, tab.vinf, np.full(paths, float(z0)), T, dt,
                           np.uint64(seed % 2**64), stream0)


# --------------------------------------------------------------------------
# exit probabilities of the limit diffusion from O


def limit_exit_probabilities(model: ChainFamily | None, delta: float, *,
                             table: DriftTable | None = None, weights=None,
                             nodes: int = 4001) -> np.ndarray:
    """Exact exit law from the ball ``d < delta`` of the kappa = 1 limit started at O.

    With outward drift ``b_l`` on edge ``l`` and scale ``S_l(delta) =
    int_0^delta exp(-2 int_0^x b_l)``, the walker leaves through edge ``l``
    with probability proportional to ``w_l / S_l(delta)``.
    """
    tab = drift_table(model) if table is None else table
    w = _weights(model, weights)
    d = np.linspace(0.0, delta, nodes)
    inv = np.empty(3)
    for e in (0, 1, 2):
        b = tab(np.full_like(d, e, dtype=np.int64), d) * (-1.0 if e == 0 else 1.0)
        B = np.concatenate([[0.0], np.cumsum(0.5 * (b[1:] + b[:-1]) * np.diff(d))])
        dens = np.exp(-2.0 * B)
        S = float(np.sum(0.5 * (dens[1:] + dens[:-1]) * np.diff(d)))
        inv[e] = w[e] / S
    return inv / inv.sum()


# --------------------------------------------------------------------------
# test functions in the generator domain


def _cubic_pieces(f0: float, d1: float, d2: float, R: float) -> np.ndarray:
    """Three C2 cubic pieces on ``[0, R/3, 2R/3, R]`` in the distance variable.

    Jet ``(f0, d1, d2)`` at 0 and ``(0, 0, 0)`` at R.  Row ``k`` holds the
    coefficients of ``sum_p c_p (d - x_k)^p`` on piece ``k``.
    """
    x = np.array([0.0, R / 3, 2 * R / 3, R])
    A = np.zeros((12, 12))
    rhs = np.zeros(12)

    def jet(k, s):  # value, first, second derivative rows at local offset s
        o = 4 * k
        r0 = np.zeros(12); r0[o:o + 4] = [1, s, s * s, s ** 3]
        r1 = np.zeros(12); r1[o + 1:o + 4] = [1, 2 * s, 3 * s * s]
        r2 = np.zeros(12); r2[o + 2:o + 4] = [2, 6 * s]
        return r0, r1, r2

    row = 0
    for r, v in zip(jet(0, 0.0), (f0, d1, d2)):
        A[row], rhs[row] = r, v
        row += 1
    for r in jet(2, x[3] - x[2]):
        A[row] = r
        row += 1
    for k in (0, 1):
        h = x[k + 1] - x[k]
        for a, b in zip(jet(k, h), jet(k + 1, 0.0)):
            A[row] = a - b
            row += 1
    return np.linalg.solve(A, rhs).reshape(3, 4)


@dataclass(frozen=True)
class TestFunction:
    """``f(l, z)`` built from C2 cubic pieces per edge, zero for ``|z| >= radius``.

    ``slopes[l]`` and ``second[l]`` are the one-sided derivatives at O in the
    signed coordinate; ``a0`` is the common generator value at O.
    """

    __test__ = False  # not a pytest class

    value: float
    slopes: tuple[float, float, float]
    second: tuple[float, float, float]
    a0: float
    radius: float
    coeffs: np.ndarray = field(repr=False, compare=False)
    table: DriftTable = field(repr=False, compare=False)
    label: str = ""

    def _eval(self, edge, z, order: int):
        edge = np.asarray(edge)
        z = np.asarray(z, dtype=float)
        edge, z = np.broadcast_arrays(edge, z)
        d = np.abs(z)
        R = self.radius
        k = np.clip((d / (R / 3)).astype(np.int64), 0, 2)
        s = d - k * (R / 3)
        c = self.coeffs[edge, k]  # (..., 4)
        if order == 0:
            out = c[..., 0] + s * (c[..., 1] + s * (c[..., 2] + s * c[..., 3]))
        elif order == 1:
            out = c[..., 1] + s * (2 * c[..., 2] + 3 * s * c[..., 3])
            out = np.where(edge == 0, -out, out)
        else:
            out = 2 * c[..., 2] + 6 * s * c[..., 3]
        out = np.where(d >= R, 0.0, out)
        return out if out.ndim else float(out)

    def __call__(self, edge, z):
        return self._eval(edge, z, 0)

    def d1(self, edge, z):
        """First derivative in the signed coordinate (one-sided at O)."""
        return self._eval(edge, z, 1)

    def d2(self, edge, z):
        return self._eval(edge, z, 2)

    def generator(self, edge, z):
        """``1/2 f'' + vbar_l f'``, with the common value ``a0`` at O."""
        edge = np.asarray(edge)
        z = np.asarray(z, dtype=float)
        out = 0.5 * self.d2(edge, z) + self.table(edge, z) * self.d1(edge, z)
        out = np.where(z == 0.0, self.a0, out)
        return out if np.ndim(out) else float(out)


def make_test_function(model: ChainFamily, slopes: tuple[float, float], a0: float = 0.0,
                       support: float = 1.0, value: float = 0.0, label: str = "",
                       table: DriftTable | None = None) -> TestFunction:
    """Element of the generator domain with prescribed upper slopes at O."""
    if not support > 0:
        raise ValueError(f"support radius must be positive, got {support}")
    cd = model.class_data
    tab = drift_table(model) if table is None else table
    s1, s2 = float(slopes[0]), float(slopes[1])
    s0 = cd.pi_bar1 * s1 + cd.pi_bar2 * s2
    sl = (s0, s1, s2)
    vb = [float(tab(e, 0.0)) for e in (0, 1, 2)]
    sec = tuple(2.0 * (a0 - vb[e] * sl[e]) for e in (0, 1, 2))
    # convert to the distance variable: d/dd = -d/dz on edge 0
    coeffs = np.stack([
        _cubic_pieces(value, -sl[e] if e == 0 else sl[e], sec[e], support) for e in (0, 1, 2)
    ])
    return TestFunction(value, sl, sec, float(a0), float(support), coeffs, tab, label)


def apply_generator(model: ChainFamily, f: TestFunction, y: GraphPoint) -> float:
    """``1/2 f''(l, z) + vbar_l(z) f'(l, z)``; the common value ``a0`` at O."""
    if y.is_vertex:
        return f.a0
    if abs(y.coord) >= f.radius:
        return 0.0
    vb = float(averaged_drift(model, y.edge, y.coord))
    return 0.5 * f.d2(y.edge, y.coord) + vb * f.d1(y.edge, y.coord)


def graph_distance(p: GraphPoint, q: GraphPoint) -> float:
    if p.edge == q.edge or p.is_vertex or q.is_vertex:
        return abs(p.coord - q.coord)
    return abs(p.coord) + abs(q.coord)
