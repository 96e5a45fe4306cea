"""Parameterized Markov chain family and its static limit quantities.

State labels are 1-based (``1..n``) in every public signature; vectors such
as ``mu`` are ordinary 0-based arrays, so ``mu[0]`` is the mass of state 1.
The first ergodic class is ``R1 = {1..m}``, the second ``R2 = {m+1..n}``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

from .errors import (
    BadClassSplit,
    BrokenBlockStructure,
    EdgeCoordMismatch,
    MissingTailConstancy,
    NegativeRate,
    NoConvergence,
    NonPositiveDrift,
    SingularSolve,
)

Knots = tuple[tuple[float, float], ...]

RESIDUAL_TOL = 1e-12
LIMIT_TOL = 1e-9
ORACLE_TOL = 1e-6
TAIL_TOL = 1e-9


def _knots(knots: Knots) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(knots, dtype=float).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def _interp(knots: Knots, z):
    xs, ys = _knots(knots)
    return np.interp(z, xs, ys)


@dataclass(frozen=True)
class RateFunction:
    """One off-diagonal rate ``q_ij(z)``.

    Inside ``(-C, C)`` the rate is the piecewise-linear ``table`` (constant
    beyond its end knots) plus, for ``z < 0`` only, the degenerate term
    ``qbar * (-z)**power * (1 + beta(z))``.  Outside it is clamped to the tail
    constants ``left`` (``z <= -C``) and ``right`` (``z >= C``).
    """

    left: float
    right: float
    table: Knots = ((0.0, 0.0),)
    qbar: float = 0.0
    power: float = 1.0
    beta: Knots = ()

    @property
    def degenerate(self) -> bool:
        return self.qbar != 0.0

    @property
    def base(self) -> float:
        return float(_interp(self.table, 0.0))

    def interior(self, z):
        z = np.asarray(z, dtype=float)
        val = _interp(self.table, z)
        if self.qbar:
            neg = z < 0
            depth = np.where(neg, -z, 0.0)
            corr = 1.0 + (_interp(self.beta, z) if self.beta else 0.0)
            val = val + np.where(neg, self.qbar * depth**self.power * corr, 0.0)
        return val


@dataclass(frozen=True)
class Drift:
    """Piecewise-linear drift ``v(i, z)`` inside ``(-C, C)``; ``vinf`` outside."""

    table: Knots

    def interior(self, z):
        return _interp(self.table, np.asarray(z, dtype=float))


@dataclass(frozen=True)
class GraphPoint:
    """Point ``(edge, coord)`` on the three-edge graph.

    Edge 0 carries ``coord <= 0``, edges 1 and 2 carry ``coord >= 0``; the
    vertex is always stored as ``(0, 0.0)``.
    """

    edge: int
    coord: float

    def __post_init__(self):
        if self.edge not in (0, 1, 2):
            raise EdgeCoordMismatch(f"edge label must be 0, 1 or 2, got {self.edge}")
        c = float(self.coord)
        if (self.edge == 0 and c > 0) or (self.edge != 0 and c < 0):
            raise EdgeCoordMismatch(f"coordinate {c} not on edge {self.edge}")
        if c == 0.0:
            object.__setattr__(self, "edge", 0)
            c = 0.0
        object.__setattr__(self, "coord", c)

    @property
    def is_vertex(self) -> bool:
        return self.coord == 0.0


VERTEX = GraphPoint(0, 0.0)


@dataclass(frozen=True)
class ChainFamily:
    """The chain family ``Xi^z`` together with the drift field.

    ``rates`` maps every ordered pair ``(i, j)``, ``i != j`` (1-based), to a
    :class:`RateFunction`.  ``drifts[i - 1]`` is the drift of state ``i``.
    Construct freely, then pass through :func:`validate_model`.
    """

    n: int
    m: int
    C: float
    kappa: int
    vinf: float
    rates: Mapping[tuple[int, int], RateFunction]
    drifts: tuple[Drift, ...]
    name: str = ""
    grid_step: float = 1e-3
    validated: bool = field(default=False, compare=False)
    diagnostics: Mapping = field(default_factory=dict, compare=False, repr=False)

    @property
    def R1(self) -> range:
        return range(1, self.m + 1)

    @property
    def R2(self) -> range:
        return range(self.m + 1, self.n + 1)

    def klass(self, i: int) -> int:
        return 1 if i <= self.m else 2

    def rate(self, i: int, j: int, z):
        f = self.rates[(i, j)]
        z = np.asarray(z, dtype=float)
        return np.where(z <= -self.C, f.left, np.where(z >= self.C, f.right, f.interior(z)))

    def drift(self, i: int, z):
        z = np.asarray(z, dtype=float)
        inside = self.drifts[i - 1].interior(z)
        return np.where(np.abs(z) >= self.C, self.vinf, inside)

    def drift_vector(self, z) -> np.ndarray:
        """Drifts of all states, shape ``z.shape + (n,)``."""
        return np.stack([self.drift(i, z) for i in range(1, self.n + 1)], axis=-1)

    def rate_matrix(self, z) -> np.ndarray:
        """Off-diagonal rates, shape ``z.shape + (n, n)``, zero diagonal."""
        z = np.asarray(z, dtype=float)
        q = np.zeros(z.shape + (self.n, self.n))
        for (i, j) in self.rates:
            q[..., i - 1, j - 1] = self.rate(i, j, z)
        return q

    @cached_property
    def class_data(self) -> "ClassData":
        return class_masses_and_branching(self)

    @cached_property
    def packed(self) -> tuple[np.ndarray, np.ndarray]:
        """``(F, I)`` arrays read by the compiled simulators."""
        return _pack(self)


# --------------------------------------------------------------------------
# validation


def _grid(model: ChainFamily) -> np.ndarray:
    step = model.grid_step
    half = np.arange(0.0, model.C + 1.0 + 0.5 * step, step)
    return np.concatenate([-half[:0:-1], half])


def _common_rate_check(model: ChainFamily) -> None:
    """Cross-class increments must vanish at one common rate as ``z -> 0-``."""
    cross = [(i, j) for (i, j) in model.rates if model.klass(i) != model.klass(j)]
    zs = -(10.0 ** -np.arange(3, 9))
    incs = np.array([model.rate(i, j, zs) - model.rate(i, j, 0.0) for (i, j) in cross])
    if np.any(incs <= 0):
        bad = cross[int(np.argwhere(incs <= 0)[0, 0])]
        raise BrokenBlockStructure(f"rates.q_{bad[0]}_{bad[1]}: increment not positive as z -> 0-")
    ratios = incs / incs[:1]
    drift = np.abs(np.log(ratios[:, -1]) - np.log(ratios[:, -2]))
    if np.any(drift > 1e-2):
        bad = cross[int(np.argmax(drift))]
        raise BrokenBlockStructure(
            f"rates.q_{bad[0]}_{bad[1]}: does not degenerate at the common rate of the other cross pairs"
        )


def validate_model(model: ChainFamily) -> ChainFamily:
    """Check every structural assumption on a z-grid and return the model
    marked as validated.

    The grid covers ``[-C-1, C+1]`` with step ``model.grid_step``.  Raises a
    :class:`~avgraph.errors.ModelError` subclass naming the offending entry.
    """
    n, m, C = model.n, model.m, model.C
    if not (1 <= m < n):
        raise BadClassSplit(f"meta: need 1 <= m < n, got n={n}, m={m}")
    if model.kappa not in (0, 1):
        raise BadClassSplit(f"meta: kappa must be 0 or 1, got {model.kappa}")
    if C <= 0:
        raise MissingTailConstancy(f"meta: cutoff C must be positive, got {C}")
    if len(model.drifts) != n:
        raise NonPositiveDrift(f"drifts: expected {n} entries, got {len(model.drifts)}")
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            if i != j and (i, j) not in model.rates:
                raise BrokenBlockStructure(f"rates.q_{i}_{j} missing")

    zs = _grid(model)
    for (i, j), f in sorted(model.rates.items()):
        where = f"rates.q_{i}_{j}"
        q = model.rate(i, j, zs)
        if np.any(q < 0):
            raise NegativeRate(f"{where}: negative at z={zs[np.argmax(q < 0)]:.6g}")
        for side, edge, tail in (("left", -C, f.left), ("right", C, f.right)):
            if abs(float(f.interior(edge)) - tail) > TAIL_TOL * max(1.0, abs(tail)):
                raise MissingTailConstancy(
                    f"{where}: {side} tail {tail} does not match the rate at z={edge}"
                )
        if f.degenerate:
            if f.qbar < 0 or f.power <= 0:
                raise BrokenBlockStructure(f"{where}: need qbar > 0 and power > 0")
            if f.beta and abs(float(_interp(f.beta, 0.0))) > TAIL_TOL:
                raise BrokenBlockStructure(f"{where}: beta must vanish at 0-")
        if model.klass(i) != model.klass(j):
            pos = zs >= 0
            if np.any(q[pos] != 0):
                raise BrokenBlockStructure(
                    f"{where}: cross-class rate nonzero at z={zs[pos][np.argmax(q[pos] != 0)]:.6g}"
                )
            if np.any(q[~pos] <= 0):
                raise BrokenBlockStructure(f"{where}: cross-class rate must be positive for z < 0")
        elif np.any(q <= 0):
            raise BrokenBlockStructure(f"{where}: within-class rate must be positive")

    for i, d in enumerate(model.drifts, start=1):
        for edge in (-C, C):
            if abs(float(d.interior(edge)) - model.vinf) > TAIL_TOL * max(1.0, abs(model.vinf)):
                raise MissingTailConstancy(f"drifts.v_{i}: drift at z={edge} differs from vinf")
        if model.kappa == 0 and np.any(model.drift(i, zs) <= 0):
            raise NonPositiveDrift(f"drifts.v_{i}: kappa=0 requires v > 0 everywhere")

    _common_rate_check(model)

    checked = dataclasses.replace(model, validated=True, diagnostics={})
    cd = checked.class_data  # limit + oracle cross-check
    mu = invariant_mu(checked, zs)
    q = checked.rate_matrix(zs)
    np.einsum("gii->gi", q)[...] = -q.sum(axis=-1)
    resid = np.abs(np.einsum("gi,gij->gj", mu, q)).max(axis=1)
    if resid.max() > RESIDUAL_TOL:
        raise SingularSolve(f"invariant residual {resid.max():.3g} at z={zs[resid.argmax()]:.6g}")
    lip = float(np.max(np.abs(np.diff(mu, axis=0)).max(axis=1) / np.diff(zs)))
    checked.diagnostics.update(
        grid_points=len(zs),
        max_residual=float(resid.max()),
        lipschitz=lip,
        oracle_gap=cd.oracle_gap,
    )
    return checked


# --------------------------------------------------------------------------
# generator and invariant distributions


def generator_matrix(model: ChainFamily, z: float) -> np.ndarray:
    q = model.rate_matrix(z)
    np.fill_diagonal(q, -q.sum(axis=1))
    return q


def _gth(rates: np.ndarray) -> np.ndarray:
    """Grassmann-Taksar-Heyman elimination on a stack of rate matrices.

    Only off-diagonal entries are read.  Subtraction-free, so the answer keeps
    full relative accuracy when some rates are tiny (the ``z -> 0-`` regime).
    """
    p = np.array(rates, dtype=float, copy=True)
    n = p.shape[-1]
    for k in range(n - 1, 0, -1):
        s = p[..., k, :k].sum(axis=-1)
        if np.any(s <= 0):
            raise SingularSolve("chain is not irreducible: null space is not one-dimensional")
        p[..., :k, k] /= s[..., None]
        p[..., :k, :k] += p[..., :k, k, None] * p[..., k, None, :k]
    x = np.zeros(p.shape[:-1])
    x[..., 0] = 1.0
    for k in range(1, n):
        x[..., k] = np.einsum("...i,...i->...", x[..., :k], p[..., :k, k])
    return x / x.sum(axis=-1, keepdims=True)


def stationary_distribution(Q) -> np.ndarray:
    """Stationary vector of one generator (or a stack), off-diagonals only."""
    return _gth(np.asarray(Q, dtype=float))


def within_class_mu(model: ChainFamily, klass: int, z) -> np.ndarray:
    """Invariant vector of the chain restricted to one class, shape ``z.shape + (|R_k|,)``."""
    idx = slice(0, model.m) if klass == 1 else slice(model.m, model.n)
    q = model.rate_matrix(z)[..., idx, idx]
    if q.shape[-1] == 1:
        return np.ones(q.shape[:-1])
    return _gth(q)


def invariant_mu(model: ChainFamily, z) -> np.ndarray:
    """Vectorized continuous selection ``mu(z)``, shape ``z.shape + (n,)``.

    For ``z < 0`` the unique invariant vector; for ``z >= 0`` the class
    weights are frozen at their ``z -> 0-`` limits.
    """
    z = np.asarray(z, dtype=float)
    flat = z.ravel()
    out = np.empty((flat.size, model.n))
    m = model.m
    neg = flat < 0
    if np.any(neg):
        q = model.rate_matrix(flat[neg])
        # cross rates can round to exactly zero just left of 0; use the limit there
        live = (q[:, :m, m:].sum(axis=(1, 2)) > 0) & (q[:, m:, :m].sum(axis=(1, 2)) > 0)
        idx = np.flatnonzero(neg)
        neg[idx[~live]] = False
        if np.any(live):
            out[idx[live]] = _gth(q[live])
    if np.any(~neg):
        cd = model.class_data
        zp = flat[~neg]
        out[~neg, :m] = cd.pi_bar1 * within_class_mu(model, 1, zp)
        out[~neg, m:] = cd.pi_bar2 * within_class_mu(model, 2, zp)
    return out.reshape(z.shape + (model.n,))


@dataclass(frozen=True)
class InvariantDistribution:
    z: float
    mu: np.ndarray
    residual: float


def invariant_distribution(model: ChainFamily, z: float) -> InvariantDistribution:
    mu = invariant_mu(model, np.array([float(z)]))[0]
    resid = float(np.abs(mu @ generator_matrix(model, z)).max())
    return InvariantDistribution(float(z), mu, resid)


# --------------------------------------------------------------------------
# limits at the bifurcation point


@dataclass(frozen=True)
class PiLimit:
    pi: np.ndarray
    zs: np.ndarray
    iterates: np.ndarray
    extrapolated: bool


def _pi_sequence(model: ChainFamily, kmin: int = 2, kmax: int = 8):
    zs = -(10.0 ** -np.arange(kmin, kmax + 1, dtype=float))
    return zs, _gth(model.rate_matrix(zs))


def limit_pi(model: ChainFamily, tol: float = LIMIT_TOL) -> PiLimit:
    """``pi = lim_{z -> 0-} mu(z)`` from solves at ``z_k = -10**-k``, ``k = 2..8``.

    Successive iterates must agree to ``tol`` in max-norm.  When the raw
    sequence is still moving (it typically drifts like ``|z|``), Aitken's
    delta-squared extrapolation is applied componentwise and the extrapolated
    sequence is tested instead.
    """
    zs, mus = _pi_sequence(model)
    if np.abs(mus[-1] - mus[-2]).max() < tol:
        return PiLimit(mus[-1], zs, mus, False)
    d1 = mus[1:] - mus[:-1]
    d2 = d1[1:] - d1[:-1]
    safe = np.where(np.abs(d2) > 1e-300, d2, 1.0)
    acc = np.where(np.abs(d2) > 1e-300, mus[2:] - d1[1:] ** 2 / safe, mus[2:])
    if np.abs(acc[-1] - acc[-2]).max() < tol:
        pi = np.clip(acc[-1], 0.0, None)
        return PiLimit(pi / pi.sum(), zs, mus, True)
    raise NoConvergence(
        f"mu(z) does not stabilize as z -> 0-: last iterates {mus[-2]} and {mus[-1]}"
    )


def aggregated_pi(model: ChainFamily, zstar: float = -1e-9) -> np.ndarray:
    """Two-class aggregation oracle for ``pi``.

    Within-class equilibria at ``z = 0`` are glued by the aggregated chain
    whose inter-class rates are ``sum_{i in R_k} mu^k_i sum_{j in R_l} qbar_ij``.
    The ``qbar`` weights are read off the rate increments at ``zstar``; the
    common degeneracy factor cancels.
    """
    mu1 = within_class_mu(model, 1, 0.0)
    mu2 = within_class_mu(model, 2, 0.0)
    inc = model.rate_matrix(zstar) - model.rate_matrix(0.0)
    m = model.m
    rho12 = float(mu1 @ inc[:m, m:].sum(axis=1))
    rho21 = float(mu2 @ inc[m:, :m].sum(axis=1))
    pb1 = rho21 / (rho12 + rho21)
    return np.concatenate([pb1 * mu1, (1.0 - pb1) * mu2])


@dataclass(frozen=True)
class ClassData:
    pi: np.ndarray
    pi_bar1: float
    pi_bar2: float
    p1: float
    p2: float
    vertex_weights: tuple[float, float, float]
    oracle_gap: float = 0.0


def class_masses_and_branching(model: ChainFamily) -> ClassData:
    """Class masses, branching probabilities and vertex weights.

    ``p1`` weighs ``pi_i * v(i, 0)`` over the first class.  When the weighted
    total is not positive (driftless or mixed-sign variants, allowed only for
    kappa=1) the branching probabilities are undefined and set to NaN.
    """
    lim = limit_pi(model)
    oracle = aggregated_pi(model)
    gap = float(np.abs(oracle - lim.pi).max())
    if gap > ORACLE_TOL:
        raise NoConvergence(f"limit pi {lim.pi} disagrees with aggregated oracle {oracle}")
    pi = lim.pi
    m = model.m
    pb1 = float(pi[:m].sum())
    pb2 = 1.0 - pb1
    v0 = model.drift_vector(0.0)
    w1, w2 = float(pi[:m] @ v0[:m]), float(pi[m:] @ v0[m:])
    if w1 >= 0 and w2 >= 0 and w1 + w2 > 0:
        p1 = w1 / (w1 + w2)
    else:
        p1 = float("nan")
    return ClassData(pi, pb1, pb2, p1, 1.0 - p1, (0.5, pb1 / 2, pb2 / 2), gap)


def averaged_drift(model: ChainFamily, edge: int, z):
    """``vbar_l(z)``: full average on edge 0, within-class average on edges 1, 2."""
    z = np.asarray(z, dtype=float)
    if edge == 0:
        if np.any(z > 0):
            raise EdgeCoordMismatch("edge 0 requires z <= 0")
        return np.einsum("...i,...i->...", model.drift_vector(z), invariant_mu(model, z))
    if edge not in (1, 2):
        raise EdgeCoordMismatch(f"unknown edge {edge}")
    if np.any(z < 0):
        raise EdgeCoordMismatch(f"edge {edge} requires z >= 0")
    idx = slice(0, model.m) if edge == 1 else slice(model.m, model.n)
    v = model.drift_vector(z)[..., idx]
    return np.einsum("...i,...i->...", v, within_class_mu(model, edge, z))


def project_h(model: ChainFamily, i: int, z: float) -> GraphPoint:
    if not 1 <= i <= model.n:
        raise ValueError(f"state {i} outside 1..{model.n}")
    if z <= 0:
        return GraphPoint(0, z)
    return GraphPoint(model.klass(i), z)


def project_h_array(model: ChainFamily, i, z) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`project_h`: returns ``(edges, coords)``."""
    i = np.asarray(i)
    z = np.asarray(z, dtype=float)
    edges = np.where(z > 0, np.where(i <= model.m, 1, 2), 0).astype(np.int8)
    return edges, np.where(z == 0, 0.0, z)


# --------------------------------------------------------------------------
# flat representation for the compiled simulators


def _pack(model: ChainFamily) -> tuple:
    n = model.n
    nf = n * n + n
    left = np.zeros(nf)
    right = np.zeros(nf)
    qbar = np.zeros(nf)
    power = np.ones(nf)
    tabs, betas = [], []
    for k in range(nf):
        if k < n * n:
            i, j = divmod(k, n)
            f = model.rates.get((i + 1, j + 1))
            if f is None:
                tabs.append(np.zeros((1, 2)))
                betas.append(np.zeros((0, 2)))
                continue
            left[k], right[k], qbar[k], power[k] = f.left, f.right, f.qbar, f.power
            tabs.append(np.asarray(f.table, dtype=float).reshape(-1, 2))
            betas.append(np.asarray(f.beta, dtype=float).reshape(-1, 2))
        else:
            left[k] = right[k] = model.vinf
            tabs.append(np.asarray(model.drifts[k - n * n].table, dtype=float).reshape(-1, 2))
            betas.append(np.zeros((0, 2)))

    def flat(parts):
        ptr = np.zeros(nf + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([len(p) for p in parts])
        allp = np.concatenate(parts) if ptr[-1] else np.zeros((0, 2))
        return ptr, np.ascontiguousarray(allp[:, 0]), np.ascontiguousarray(allp[:, 1])

    tp, tx, ty = flat(tabs)
    bp, bx, by = flat(betas)
    # I[0] = nf, I[1:9] = offsets into F of the float blocks, then the table
    # and beta pointers; F[0] = C.
    blocks = [left, right, qbar, power, tx, ty, bx, by]
    offs = np.cumsum([1] + [b.shape[0] for b in blocks])[:-1]
    F = np.concatenate([[float(model.C)]] + blocks).astype(np.float64)
    I = np.concatenate([[nf], offs, tp, bp]).astype(np.int64)
    return F, I
