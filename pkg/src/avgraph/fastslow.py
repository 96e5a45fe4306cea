"""Monte Carlo for the fast-slow process ``(xi_t, z_t)``.

Between jumps ``z`` follows ``dz = v(i, z) dt + kappa dW``; the jump clock
``r(t) = eps^-1 int Q_i(z_s) ds`` is integrated with the same steps and the
chain jumps when it crosses an Exp(1) level, to ``j`` with probability
``q_ij(z)/Q_i(z)`` at the crossing point.  All heavy lifting is in
:mod:`avgraph._kernels`.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .chain import ChainFamily, GraphPoint, project_h_array
from .errors import EmptyLaw, HorizonExceeded, ModelError, StepTooLarge

STATUS = {K.ST_HORIZON: "horizon", K.ST_HI: "upper", K.ST_LO: "lower", K.ST_JUMP: "jump"}
_EV_CAP = 4096


def fmt(x) -> str:
    return "%.17g" % x


@dataclass(frozen=True)
class Stream:
    """Handle on one counter-based random stream: ``(seed, index)``."""

    seed: int = 0
    index: int = 0

    @property
    def useed(self) -> np.uint64:
        return np.uint64(self.seed % 2**64)


def _stream(rng, default_seed: int = 0) -> Stream:
    if rng is None:
        return Stream(default_seed, 0)
    if isinstance(rng, Stream):
        return rng
    return Stream(int(rng), 0)


@dataclass(frozen=True)
class FastSlowState:
    i: int
    z: float
    t: float = 0.0

    def __post_init__(self):
        if self.i < 1:
            raise ValueError(f"state index must be >= 1, got {self.i}")
        if self.t < 0:
            raise ValueError(f"time must be >= 0, got {self.t}")

    def check(self, model: ChainFamily) -> None:
        if self.i > model.n:
            raise ValueError(f"state {self.i} outside 1..{model.n}")


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.  ``dt`` defaults to ``eps/10``; ``kappa=None`` uses the model's."""

    epsilon: float
    T: float = 1.0
    dt: float | None = None
    kappa: int | None = None
    seed: int = 0
    paths: int = 1
    out_dt: float | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if self.kappa not in (None, 0, 1):
            raise ValueError(f"kappa must be 0 or 1, got {self.kappa}")
        if self.paths < 1:
            raise ValueError(f"paths must be >= 1, got {self.paths}")
        dt = self.epsilon / 10 if self.dt is None else float(self.dt)
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt}")
        if dt > self.epsilon / 10 * (1 + 1e-12):
            raise StepTooLarge(f"dt={dt} exceeds eps/10={self.epsilon / 10}")
        object.__setattr__(self, "dt", dt)
        if self.out_dt is not None:
            _grid_size(self.T, self.out_dt)

    def kappa_for(self, model: ChainFamily) -> int:
        return model.kappa if self.kappa is None else self.kappa


def _grid_size(T: float, out_dt: float) -> int:
    k = T / out_dt
    if not out_dt > 0 or abs(k - round(k)) > 1e-9 * max(k, 1):
        raise ValueError(f"output step {out_dt} must divide the horizon {T}")
    return int(round(k)) + 1


def _require_validated(model: ChainFamily) -> None:
    if not model.validated:
        raise ModelError("model must pass validate_model before simulation")


@dataclass(frozen=True)
class ClockDiagnostics:
    level: float
    clock: float
    jumped: bool


def advance_to_jump(model: ChainFamily, state: FastSlowState, epsilon: float, kappa: int,
                    dt: float, rng=None, *, horizon: float = 10.0,
                    level: float | None = None) -> tuple[FastSlowState, ClockDiagnostics]:
    """Run the slow motion until the jump clock fires or ``state.t + horizon``.

    Returns the pre-jump state (chain index unchanged) and the clock level and
    value at the stop.  ``level`` overrides the Exp(1) draw.
    """
    state.check(model)
    SimConfig(epsilon=epsilon, dt=dt, kappa=kappa)
    s = _stream(rng)
    F, I = model.packed
    E0 = -1.0 if level is None else float(level)
    res, _, _, _ = K.fastslow_single(F, I, model.n, state.i, state.z, horizon, epsilon, kappa,
                                     dt, 0.0, -np.inf, np.inf, True, E0, s.useed, s.index, 0, 0)
    t, i, z, status, _, _, E, r = res
    return (FastSlowState(int(i) + 1, float(z), state.t + float(t)),
            ClockDiagnostics(float(E), float(r), status == K.ST_JUMP))


@dataclass
class Path:
    """One trajectory: output grid samples, jump events and terminal state."""

    t: np.ndarray
    i: np.ndarray
    z: np.ndarray
    jumps: np.ndarray  # rows (t, from, to, z)
    terminal: FastSlowState

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,i,z\n")
        for t, i, z in zip(self.t, self.i, self.z):
            buf.write(f"{fmt(t)},{int(i)},{fmt(z)}\n")
        buf.write("# jumps\nt,from,to,z\n")
        for t, a, b, z in self.jumps:
            buf.write(f"{fmt(t)},{int(a)},{int(b)},{fmt(z)}\n")
        return buf.getvalue()


def simulate_path(model: ChainFamily, x0: FastSlowState, cfg: SimConfig, rng=None) -> Path:
    """Simulate one path on ``[0, T]``, sampled every ``cfg.out_dt`` (default ``T/1000``)."""
    _require_validated(model)
    x0.check(model)
    s = _stream(rng, cfg.seed)
    out_dt = cfg.out_dt if cfg.out_dt is not None else cfg.T / 1000
    G = _grid_size(cfg.T, out_dt)
    F, I = model.packed
    cap = _EV_CAP
    while True:
        res, rec_i, rec_z, ev = K.fastslow_single(
            F, I, model.n, x0.i, x0.z, cfg.T, cfg.epsilon, cfg.kappa_for(model), cfg.dt,
            out_dt, -np.inf, np.inf, False, -1.0, s.useed, s.index, cap, G)
        nev = int(res[4])
        if nev <= cap:
            break
        cap = nev
    t_grid = x0.t + out_dt * np.arange(G)
    jumps = ev[:nev].copy()
    jumps[:, 0] += x0.t
    return Path(t_grid, rec_i.astype(np.int64), rec_z, jumps,
                FastSlowState(int(res[1]) + 1, float(res[2]), x0.t + float(res[0])))


@dataclass
class Ensemble:
    """Per-path outcomes of a batch run (1-based states)."""

    t: np.ndarray
    i: np.ndarray
    z: np.ndarray
    status: np.ndarray
    jumps: np.ndarray
    cycles: np.ndarray
    grid_i: np.ndarray | None = None
    grid_z: np.ndarray | None = None

    def klass(self, m: int) -> np.ndarray:
        return np.where(self.i <= m, 1, 2)


def run_ensemble(model: ChainFamily, i0, z0, cfg: SimConfig, *, lo: float = -np.inf,
                 hi: float = np.inf, cycle_delta: float = 0.0, record: bool = False,
                 stream0: int = 0) -> Ensemble:
    """Run ``len(i0)`` paths; path ``p`` uses stream ``stream0 + p`` of ``cfg.seed``.

    Paths stop at ``T`` or when ``z`` reaches ``lo``/``hi``.  With ``record``
    the states on the ``cfg.out_dt`` grid are returned too.
    """
    _require_validated(model)
    K.set_threads()
    i0 = np.ascontiguousarray(np.broadcast_to(np.asarray(i0, dtype=np.int64), (cfg.paths,)))
    z0 = np.ascontiguousarray(np.broadcast_to(np.asarray(z0, dtype=float), (cfg.paths,)))
    if i0.min() < 1 or i0.max() > model.n:
        raise ValueError("initial states outside 1..n")
    P = cfg.paths
    if record:
        out_dt = cfg.out_dt if cfg.out_dt is not None else cfg.T / 1000
        G = _grid_size(cfg.T, out_dt)
    else:
        out_dt, G = 0.0, 0
    rec_i = np.zeros((P, G), np.int8)
    rec_z = np.zeros((P, G))
    F, I = model.packed
    t, i, z, st, nj, nc = K.fastslow_ensemble(
        F, I, model.n, i0, z0, cfg.T, cfg.epsilon, cfg.kappa_for(model), cfg.dt, out_dt,
        float(lo), float(hi), float(cycle_delta), np.uint64(cfg.seed % 2**64), stream0,
        rec_i, rec_z)
    return Ensemble(t, i, z, st, nj, nc,
                    rec_i.astype(np.int64) if record else None, rec_z if record else None)


@dataclass(frozen=True)
class ExitResult:
    time: float
    side: float  # -delta, +delta or nan when the cap was hit
    klass: int   # class of xi at exit, 0 when the cap was hit
    exceeded: bool = False


def first_exit(model: ChainFamily, x0: FastSlowState, cfg: SimConfig, delta: float,
               rng=None) -> ExitResult:
    """First time ``|z| = delta``; ``cfg.T`` is the cap (reported, not raised)."""
    if abs(x0.z) > delta:
        raise ValueError(f"start |z|={abs(x0.z)} outside the ball of radius {delta}")
    s = _stream(rng, cfg.seed)
    one = SimConfig(epsilon=cfg.epsilon, T=cfg.T, dt=cfg.dt, kappa=cfg.kappa, seed=s.seed)
    ens = run_ensemble(model, [x0.i], [x0.z], one, lo=-delta, hi=delta, stream0=s.index)
    return _exit_from(ens, 0, delta, model.m, x0.t)


def _exit_from(ens: Ensemble, p: int, delta: float, m: int, t0: float = 0.0) -> ExitResult:
    st = ens.status[p]
    if st == K.ST_HORIZON:
        return ExitResult(t0 + float(ens.t[p]), float("nan"), 0, True)
    side = delta if st == K.ST_HI else -delta
    return ExitResult(t0 + float(ens.t[p]), side, 1 if ens.i[p] <= m else 2)


@dataclass
class ExitCounts:
    """Exit tallies of an ensemble: sides ``(-delta, +delta & R1, +delta & R2)``."""

    counts: np.ndarray
    exceeded: int
    paths: int

    @property
    def freqs(self) -> np.ndarray:
        return self.counts / max(self.paths - self.exceeded, 1)

    def stderr(self) -> np.ndarray:
        f = self.freqs
        return np.sqrt(f * (1 - f) / max(self.paths - self.exceeded, 1))


def exit_counts(model: ChainFamily, x0: FastSlowState, cfg: SimConfig, delta: float,
                stream0: int = 0) -> ExitCounts:
    if abs(x0.z) > delta:
        raise ValueError(f"start |z|={abs(x0.z)} outside the ball of radius {delta}")
    ens = run_ensemble(model, x0.i, x0.z, cfg, lo=-delta, hi=delta, stream0=stream0)
    lo = ens.status == K.ST_LO
    hi = ens.status == K.ST_HI
    c = np.array([lo.sum(), (hi & (ens.i <= model.m)).sum(), (hi & (ens.i > model.m)).sum()])
    exceeded = int((ens.status == K.ST_HORIZON).sum())
    if exceeded:
        import warnings
        warnings.warn(f"{exceeded} paths did not leave the ball by T={cfg.T}", HorizonExceeded)
    return ExitCounts(c, exceeded, cfg.paths)


def first_passage_classes(model: ChainFamily, x0: FastSlowState, cfg: SimConfig,
                          level: float, stream0: int = 0) -> tuple[np.ndarray, int]:
    """Class of ``xi`` at the first hit of ``z = level`` (0 for paths that never hit)."""
    ens = run_ensemble(model, x0.i, x0.z, cfg, hi=level, stream0=stream0)
    hit = ens.status == K.ST_HI
    return np.where(hit, ens.klass(model.m), 0), int((~hit).sum())


@dataclass
class EmpiricalLaw:
    """Equal-weight atoms on the graph, stored sorted by ``(edge, coord)``."""

    edges: np.ndarray
    coords: np.ndarray
    T: float
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64)
        self.coords = np.asarray(self.coords, dtype=float)
        if self.edges.size == 0:
            raise EmptyLaw("law has no samples")
        order = np.lexsort((self.coords, self.edges))
        self.edges = self.edges[order]
        self.coords = self.coords[order]
        self.weights = np.full(self.edges.size, 1.0 / self.edges.size)

    @property
    def count(self) -> int:
        return int(self.edges.size)

    def points(self) -> list[GraphPoint]:
        return [GraphPoint(int(e), float(c)) for e, c in zip(self.edges, self.coords)]

    def edge_mass(self) -> np.ndarray:
        return np.bincount(self.edges, minlength=3) / self.count

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("edge,coord,weight\n")
        for e, c, w in zip(self.edges, self.coords, self.weights):
            buf.write(f"{int(e)},{fmt(c)},{fmt(w)}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, T: float = float("nan")) -> "EmpiricalLaw":
        rows = [ln.split(",") for ln in text.splitlines()[1:] if ln and not ln.startswith("#")]
        if not rows:
            raise EmptyLaw("no samples in CSV")
        return cls(np.array([int(r[0]) for r in rows]), np.array([float(r[1]) for r in rows]), T)


def monte_carlo_law(model: ChainFamily, x0: FastSlowState, cfg: SimConfig,
                    rng=None) -> EmpiricalLaw:
    """Law of ``h(X_T)`` from ``cfg.paths`` independent paths."""
    x0.check(model)
    s = _stream(rng, cfg.seed)
    ens = run_ensemble(model, x0.i, x0.z, SimConfig(
        epsilon=cfg.epsilon, T=cfg.T, dt=cfg.dt, kappa=cfg.kappa, seed=s.seed,
        paths=cfg.paths), stream0=s.index)
    e, c = project_h_array(model, ens.i, ens.z)
    return EmpiricalLaw(e, c, cfg.T)
