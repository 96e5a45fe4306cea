"""Matrix machinery for the branching probability.

``N(z) = D_v(z)^-1 Q(z)`` is the chain generator rescaled by the drift,
``N^delta`` its average over ``[-delta, delta]``.  The probability of leaving
``[-delta, delta]`` in class R1 solves ``df/dz = -eps^-1 N(z) f`` with
``f(delta) = ebar``; for small ``delta`` it is governed by the second
eigenpair of ``N^delta`` and by the left null vector ``psi`` of ``N^delta``.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np
import scipy.integrate
import scipy.linalg

from .chain import ChainFamily, _gth
from .errors import (DeltaOutOfRange, DegenerateBasis, EigenNotSimple, NoGridConvergence,
                     NonPositiveDrift, NoQRConvergence)

RESIDUAL_TOL = 1e-10
GAP_FLOOR = 1e-12
PROFILE_TOL = 1e-8


def n_matrix(model: ChainFamily, z) -> np.ndarray:
    """``N(z)``; accepts arrays of ``z`` (result shape ``z.shape + (n, n)``)."""
    z = np.asarray(z, dtype=float)
    v = model.drift_vector(z)
    if np.any(v <= 0):
        raise NonPositiveDrift("N(z) needs v(i, z) > 0")
    q = model.rate_matrix(z)
    idx = np.arange(model.n)
    q[..., idx, idx] = 0.0
    q[..., idx, idx] = -q.sum(axis=-1)
    return q / v[..., :, None]


def _breakpoints(model: ChainFamily, a: float, b: float) -> list[float]:
    pts = {0.0, -model.C, model.C}
    for f in model.rates.values():
        pts.update(x for x, _ in f.table)
        pts.update(x for x, _ in f.beta)
    for d in model.drifts:
        pts.update(x for x, _ in d.table)
    return sorted(p for p in pts if a < p < b)


def n_delta(model: ChainFamily, delta: float) -> np.ndarray:
    """``(1/2 delta) int_{-delta}^{delta} N(z) dz`` by adaptive quadrature."""
    if not 0 < delta <= model.C:
        raise DeltaOutOfRange(f"delta must lie in (0, C={model.C}], got {delta}")
    n = model.n
    total = np.zeros((n, n))
    edges = [-delta] + _breakpoints(model, -delta, delta) + [delta]
    for a, b in zip(edges, edges[1:]):
        val, _ = scipy.integrate.quad_vec(lambda z: n_matrix(model, z).ravel(), a, b,
                                          epsabs=1e-14, epsrel=1e-12)
        total += val.reshape(n, n)
    out = total / (2 * delta)
    idx = np.arange(n)
    out[idx, idx] = 0.0
    out[idx, idx] = -out.sum(axis=1)  # exact zero row sums
    return out


# --------------------------------------------------------------------------
# matrix exponential: Pade(13) with scaling and squaring

_PADE13 = np.array([
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
    129060195264000.0, 10559470521600.0, 670442572800.0, 33522128640.0, 1323241920.0,
    40840800.0, 960960.0, 16380.0, 182.0, 1.0,
])
_THETA13 = 5.371920351148152


def matrix_exponential(M) -> np.ndarray:
    """``exp(M)`` for a square matrix or a stack of them (shape ``(..., n, n)``)."""
    A = np.array(M, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {A.shape}")
    n = A.shape[-1]
    norm = np.abs(A).sum(axis=-2).max() if A.size else 0.0
    if norm == 0.0:
        return np.broadcast_to(np.eye(n), A.shape).copy()
    s = max(0, int(np.ceil(np.log2(norm / _THETA13)))) if norm > _THETA13 else 0
    # zero row sums: exp(M) e = e exactly, restored after each squaring
    keep_e = bool(np.all(np.abs(A.sum(axis=-1)) <= 64 * np.finfo(float).eps * max(norm, 1.0)))
    A = A / 2.0 ** s
    b = _PADE13
    I = np.broadcast_to(np.eye(n), A.shape)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I)
    V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I
    R = np.linalg.solve(V - U, V + U)
    idx = np.arange(n)
    for _ in range(s):
        R = R @ R
        if keep_e:
            R[..., idx, idx] += 1.0 - R.sum(axis=-1)
    return R


# --------------------------------------------------------------------------
# f_eps profile


def ebar(model: ChainFamily) -> np.ndarray:
    e = np.zeros(model.n)
    e[: model.m] = 1.0
    return e


def _profile_on_grid(model: ChainFamily, delta: float, epsilon: float, cells: int) -> np.ndarray:
    # march in u = -z from u = -delta to u = delta; f' = eps^-1 N(-u) f
    u = np.concatenate([np.linspace(-delta, 0.0, cells + 1), np.linspace(0.0, delta, cells + 1)[1:]])
    h = np.diff(u)
    c = np.sqrt(3.0) / 6.0
    A1 = n_matrix(model, -(u[:-1] + (0.5 - c) * h)) / epsilon
    A2 = n_matrix(model, -(u[:-1] + (0.5 + c) * h)) / epsilon
    hh = h[:, None, None]
    omega = 0.5 * hh * (A1 + A2) + (np.sqrt(3.0) / 12.0) * hh ** 2 * (A2 @ A1 - A1 @ A2)
    steps = matrix_exponential(omega)
    f = ebar(model)
    for E in steps:
        f = E @ f
    return f


def f_epsilon_profile(model: ChainFamily, delta: float, epsilon: float, *,
                      tol: float = PROFILE_TOL, max_cells: int = 2 ** 17) -> np.ndarray:
    """``f_eps(., -delta)``: ordered exponential (fourth-order Magnus steps),
    cell count doubled until successive answers differ by less than ``tol``."""
    if not 0 < delta <= model.C:
        raise DeltaOutOfRange(f"delta must lie in (0, C={model.C}], got {delta}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    cells = 16
    prev = _profile_on_grid(model, delta, epsilon, cells)
    while cells < max_cells:
        cells *= 2
        cur = _profile_on_grid(model, delta, epsilon, cells)
        if np.abs(cur - prev).max() < tol:
            return cur
        prev = cur
    raise NoGridConvergence(f"profile not converged with {cells} cells per side")


def f_epsilon_closed(model: ChainFamily, delta: float, epsilon: float) -> np.ndarray:
    """``exp((2 delta/eps) N^delta) ebar``; exact when the ``N(z)`` commute."""
    return matrix_exponential(2 * delta / epsilon * n_delta(model, delta)) @ ebar(model)


# --------------------------------------------------------------------------
# eigen-structure


@dataclass(frozen=True)
class Eigenpair:
    lam: float
    vec: np.ndarray
    top: float
    gap: float
    residual: float


def second_eigenpair(model: ChainFamily, delta: float, *, residual_tol: float = RESIDUAL_TOL,
                     gap_floor: float = GAP_FLOOR, Nd: np.ndarray | None = None) -> Eigenpair:
    """Eigenvalue of ``N^delta`` with the second-largest real part, and its right
    eigenvector.  ``top`` is the leading eigenvalue (zero, eigenvector ``e``)."""
    Nd = n_delta(model, delta) if Nd is None else Nd
    try:
        w, V = np.linalg.eig(Nd)
    except np.linalg.LinAlgError as exc:
        raise NoQRConvergence(str(exc)) from exc
    order = np.argsort(-w.real, kind="stable")
    w, V = w[order], V[:, order]
    lam = w[1]
    if abs(lam.imag) > gap_floor:
        raise EigenNotSimple(f"second eigenvalue {lam} is not real")
    gap = min(abs(w[0] - lam), abs(lam - w[2]) if len(w) > 2 else np.inf)
    if gap < gap_floor:
        raise EigenNotSimple(f"spectral gap {gap} below {gap_floor}")
    g = V[:, 1].real
    g = g / np.abs(g).max()
    res = np.abs(Nd @ g - lam.real * g).max()
    if res > residual_tol * np.abs(g).max():
        raise NoQRConvergence(f"eigen residual {res} exceeds {residual_tol}")
    return Eigenpair(float(lam.real), g, float(w[0].real), float(gap), float(res))


def complement_basis(N0: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Orthonormal basis of the invariant subspace of ``N(0)`` for its nonzero
    eigenvalues (real Schur form, so defective cases are covered)."""
    _, Z, sdim = scipy.linalg.schur(N0, output="real", sort=lambda x, y: np.hypot(x, y) > tol)
    return Z[:, :sdim]


@dataclass
class SpectralReport:
    delta: float
    N0: np.ndarray
    Ndelta: np.ndarray
    Hdelta: np.ndarray
    lambda1: float
    g: np.ndarray  # normalized as e + alpha * ebar + gbar
    alpha: float
    pi_proj: float
    psi: np.ndarray
    pi1: np.ndarray
    pi2: np.ndarray
    p1: float
    gap: float
    g_psi: float
    psi_residual: float

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def row(self) -> dict:
        return {"delta": self.delta, "lambda1": self.lambda1, "alpha": self.alpha,
                "pi_proj": self.pi_proj, "p1": self.p1, "gap": self.gap}


SWEEP_COLUMNS = ("delta", "lambda1", "alpha", "pi_proj", "p1", "gap")


def left_null_vector(Nd: np.ndarray) -> np.ndarray:
    """``psi`` with ``psi N = 0`` and ``<e, psi> = 1``.

    ``N^delta`` has nonnegative off-diagonal entries and zero row sums, so
    this is a stationary vector and the subtraction-free elimination applies.
    """
    return _gth(Nd)


def alpha_and_projection(model: ChainFamily, delta: float) -> SpectralReport:
    n, m = model.n, model.m
    N0 = n_matrix(model, 0.0)
    Nd = n_delta(model, delta)
    pair = second_eigenpair(model, delta, Nd=Nd)
    e = np.ones(n)
    eb = ebar(model)
    Z = complement_basis(N0)
    if Z.shape[1] != n - 2:
        raise DegenerateBasis(f"N(0) has {n - Z.shape[1]} small eigenvalues, expected 2")
    B = np.column_stack([e, eb, Z])
    if np.linalg.cond(B) > 1e12:
        raise DegenerateBasis("basis {e, ebar, complement} is singular")
    coef = np.linalg.solve(B, pair.vec)
    if abs(coef[0]) < 1e-14:
        raise DegenerateBasis("eigenvector has no component along e")
    g = pair.vec / coef[0]
    alpha = float(coef[1] / coef[0])
    psi = left_null_vector(Nd)
    resid = float(np.abs(psi @ Nd).max())
    cd = model.class_data
    w = cd.pi * model.drift_vector(0.0)
    pi1 = np.where(np.arange(n) < m, w, 0.0)
    pi2 = np.where(np.arange(n) >= m, w, 0.0)
    return SpectralReport(
        delta=float(delta), N0=N0, Ndelta=Nd, Hdelta=Nd - N0, lambda1=pair.lam, g=g,
        alpha=alpha, pi_proj=float(psi @ eb), psi=psi, pi1=pi1, pi2=pi2, p1=cd.p1,
        gap=pair.gap, g_psi=float(g @ psi), psi_residual=resid,
    )


def spectral_sweep(model: ChainFamily, deltas) -> list[SpectralReport]:
    return [alpha_and_projection(model, float(d)) for d in deltas]


def sweep_csv(reports: list[SpectralReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in reports:
        w.writerow(["%.17g" % r.row()[c] for c in SWEEP_COLUMNS])
    return buf.getvalue()
