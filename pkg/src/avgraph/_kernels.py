"""Compiled inner loops.

Every path owns a xoshiro256** stream seeded from ``(seed, stream index)``
through splitmix64, so ensembles are bit-identical whatever the number of
worker threads.  Model functions are evaluated from the two flat arrays in
``ChainFamily.packed``; states are 0-based inside this module.
"""
import math
import os

import numba as nb
import numpy as np
from numba import njit, prange

nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

U64 = np.uint64
_TWO53 = 1.0 / 9007199254740992.0
_TWOPI = 2.0 * math.pi

ST_HORIZON, ST_HI, ST_LO, ST_JUMP = 0, 1, 2, 3


def set_threads() -> int:
    """Apply ``AVGRAPH_THREADS`` (capped at the numba pool size)."""
    want = os.environ.get("AVGRAPH_THREADS")
    if want:
        k = max(1, min(int(want), nb.config.NUMBA_NUM_THREADS))
        nb.set_num_threads(k)
    return nb.get_num_threads()


# --------------------------------------------------------------------------
# random numbers


@njit(cache=True)
def _splitmix(x):
    x = x + U64(0x9E3779B97F4A7C15)
    z = x
    z = (z ^ (z >> U64(30))) * U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> U64(27))) * U64(0x94D049BB133111EB)
    return x, z ^ (z >> U64(31))


@njit(cache=True)
def seed_state(seed, stream):
    s = np.empty(4, np.uint64)
    x, a = _splitmix(U64(seed))
    x, b = _splitmix(a ^ (U64(stream) * U64(0xD1B54A32D192ED03)))
    x = b
    for k in range(4):
        x, s[k] = _splitmix(x)
    return s


@njit(cache=True)
def _rotl(x, k):
    return (x << U64(k)) | (x >> U64(64 - k))


@njit(cache=True)
def _next(s):
    s0, s1, s2, s3 = s[0], s[1], s[2], s[3]
    result = _rotl(s1 * U64(5), 7) * U64(9)
    t = s1 << U64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    s[0], s[1], s[2], s[3] = s0, s1, s2, s3
    return result


@njit(cache=True)
def uniform(s):
    return float(_next(s) >> U64(11)) * _TWO53


@njit(cache=True)
def normal(s):
    u1 = 1.0 - uniform(s)
    u2 = uniform(s)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWOPI * u2)


@njit(cache=True)
def exponential(s):
    return -math.log(1.0 - uniform(s))


@njit(cache=True)
def stream_uniforms(seed, stream0, count):
    out = np.empty(count)
    for p in range(count):
        s = seed_state(seed, stream0 + p)
        out[p] = uniform(s)
    return out


@njit(cache=True)
def stream_exponentials(seed, stream0, count):
    out = np.empty(count)
    for p in range(count):
        s = seed_state(seed, stream0 + p)
        out[p] = exponential(s)
    return out


# --------------------------------------------------------------------------
# model evaluation


# Model layout (see ``chain._pack``): ``I[0]`` is the number of functions,
# ``I[1:9]`` the offsets in ``F`` of left, right, qbar, power, table x/y and
# beta x/y, then the table and beta pointers; ``F[0]`` is the cutoff C.


@njit(cache=True)
def _interp(F, ox, oy, lo, hi, z):
    if hi <= lo:
        return 0.0
    if z <= F[ox + lo]:
        return F[oy + lo]
    if z >= F[ox + hi - 1]:
        return F[oy + hi - 1]
    k = lo + 1
    while z >= F[ox + k]:
        k += 1
    w = (z - F[ox + k - 1]) / (F[ox + k] - F[ox + k - 1])
    return F[oy + k - 1] + w * (F[oy + k] - F[oy + k - 1])


@njit(cache=True)
def fn(F, I, k, z):
    C = F[0]
    if z <= -C:
        return F[I[1] + k]
    if z >= C:
        return F[I[2] + k]
    nf = I[0]
    val = _interp(F, I[5], I[6], I[9 + k], I[10 + k], z)
    qb = F[I[3] + k]
    if qb != 0.0 and z < 0.0:
        corr = 1.0
        b0 = I[10 + nf + k]
        b1 = I[11 + nf + k]
        if b1 > b0:
            corr += _interp(F, I[7], I[8], b0, b1, z)
        val += qb * (-z) ** F[I[4] + k] * corr
    return val


@njit(cache=True)
def fn_array(F, I, k, zs):
    out = np.empty(zs.shape[0])
    for a in range(zs.shape[0]):
        out[a] = fn(F, I, k, zs[a])
    return out


@njit(cache=True)
def _total_rate(F, I, n, i, z):
    s = 0.0
    for j in range(n):
        if j != i:
            s += fn(F, I, i * n + j, z)
    return s


@njit(cache=True)
def _drift(F, I, n, i, z):
    return fn(F, I, n * n + i, z)


@njit(cache=True)
def _pick(F, I, n, i, z, u):
    tot = _total_rate(F, I, n, i, z)
    target = u * tot
    acc = 0.0
    last = -1
    for j in range(n):
        if j == i:
            continue
        q = fn(F, I, i * n + j, z)
        if q > 0.0:
            last = j
            acc += q
            if target < acc:
                return j
    return last


@njit(cache=True)
def _cycles(z0, z1, delta, phase, ncyc):
    if delta <= 0.0:
        return phase, ncyc
    if phase == 0:
        if (z0 <= 0.0 <= z1) or (z1 <= 0.0 <= z0):
            phase = 1
    if phase == 1 and abs(z1) >= delta:
        ncyc += 1
        phase = 0
    return phase, ncyc


# --------------------------------------------------------------------------
# fast-slow process


@njit(cache=True)
def run_fastslow(F, I, n, i, z, T, eps, kappa, dt, out_dt, lo, hi, cyc_delta,
                 stop_at_jump, E0, s, rec_i, rec_z, ev):
    """Simulate one path from ``(i, z)`` at ``t = 0``.

    Returns ``(t, i, z, status, n_jumps, n_cycles, clock_level, clock_value)``.
    """
    t = 0.0
    nrec = rec_i.shape[0]
    row = 0
    t_next = np.inf
    if nrec > 0:
        rec_i[0] = i + 1
        rec_z[0] = z
        row = 1
        t_next = out_dt
    E = E0 if E0 >= 0.0 else exponential(s)
    r = 0.0
    nev = 0
    ncyc = 0
    phase = 0
    if cyc_delta > 0.0 and z == 0.0:
        phase = 1
    if z >= hi:
        return t, i, z, ST_HI, nev, ncyc, E, r
    if z <= lo:
        return t, i, z, ST_LO, nev, ncyc, E, r
    status = ST_HORIZON
    tol = 1e-13 * max(T, 1.0)
    q0 = _total_rate(F, I, n, i, z)
    while T - t > tol:
        h = min(dt, T - t)
        if nrec > 0:
            h = min(h, t_next - t)
        if kappa == 0:
            k1 = _drift(F, I, n, i, z)
            k2 = _drift(F, I, n, i, z + 0.5 * h * k1)
            k3 = _drift(F, I, n, i, z + 0.5 * h * k2)
            k4 = _drift(F, I, n, i, z + h * k3)
            z1 = z + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        else:
            z1 = z + _drift(F, I, n, i, z) * h + math.sqrt(h) * normal(s)
        q1 = _total_rate(F, I, n, i, z1)
        r1 = r + 0.5 * h * (q0 + q1) / eps
        jump = r1 >= E and r1 > r
        theta = (E - r) / (r1 - r) if jump else 1.0
        side = 0
        phi = 2.0
        if z1 >= hi:
            side = ST_HI
            phi = (hi - z) / (z1 - z) if z1 > z else 0.0
        elif z1 <= lo:
            side = ST_LO
            phi = (lo - z) / (z1 - z) if z1 < z else 0.0
        if side != 0 and (not jump or phi <= theta):
            zb = hi if side == ST_HI else lo
            phase, ncyc = _cycles(z, zb, cyc_delta, phase, ncyc)
            t += phi * h
            z = zb
            status = side
            break
        if jump:
            z_prev = z
            zj = z + theta * (z1 - z)
            if kappa == 1 and theta < 1.0:
                zj += math.sqrt(theta * (1.0 - theta) * h) * normal(s)
            phase, ncyc = _cycles(z, zj, cyc_delta, phase, ncyc)
            t += theta * h
            z = zj
            if stop_at_jump:
                r = E
                status = ST_JUMP
                break
            u = uniform(s)
            j = _pick(F, I, n, i, z, u)
            if j < 0:
                # all rates vanish at z_sigma (step ran into the upper block):
                # draw the target from the step end where the clock was running
                j = _pick(F, I, n, i, z_prev if q0 > 0.0 else z1, u)
            if nev < ev.shape[0]:
                ev[nev, 0] = t
                ev[nev, 1] = i + 1
                ev[nev, 2] = j + 1
                ev[nev, 3] = z
            nev += 1
            i = j
            r = 0.0
            E = exponential(s)
            q0 = _total_rate(F, I, n, i, z)
        else:
            phase, ncyc = _cycles(z, z1, cyc_delta, phase, ncyc)
            z = z1
            t += h
            r = r1
            q0 = q1
        if nrec > 0 and t >= t_next - 1e-12 * out_dt:
            t = t_next
            rec_i[row] = i + 1
            rec_z[row] = z
            row += 1
            t_next = out_dt * row if row < nrec else np.inf
    return t, i, z, status, nev, ncyc, E, r


@njit(parallel=True, cache=True)
def fastslow_ensemble(F, I, n, i0, z0, T, eps, kappa, dt, out_dt, lo, hi, cyc_delta,
                      seed, stream0, rec_i, rec_z):
    P = i0.shape[0]
    out_t = np.empty(P)
    out_i = np.empty(P, np.int64)
    out_z = np.empty(P)
    out_status = np.empty(P, np.int64)
    out_jumps = np.empty(P, np.int64)
    out_cycles = np.empty(P, np.int64)
    for p in prange(P):
        s = seed_state(seed, stream0 + p)
        ev = np.empty((0, 4))
        res = run_fastslow(F, I, n, i0[p] - 1, z0[p], T, eps, kappa, dt, out_dt, lo, hi,
                           cyc_delta, False, -1.0, s, rec_i[p], rec_z[p], ev)
        out_t[p] = res[0]
        out_i[p] = res[1] + 1
        out_z[p] = res[2]
        out_status[p] = res[3]
        out_jumps[p] = res[4]
        out_cycles[p] = res[5]
    return out_t, out_i, out_z, out_status, out_jumps, out_cycles


@njit(cache=True)
def fastslow_single(F, I, n, i0, z0, T, eps, kappa, dt, out_dt, lo, hi, stop_at_jump, E0,
                    seed, stream, ev_cap, nrec):
    s = seed_state(seed, stream)
    rec_i = np.zeros(nrec, np.int8)
    rec_z = np.zeros(nrec)
    ev = np.zeros((ev_cap, 4))
    res = run_fastslow(F, I, n, i0 - 1, z0, T, eps, kappa, dt, out_dt, lo, hi, 0.0,
                       stop_at_jump, E0, s, rec_i, rec_z, ev)
    return res, rec_i, rec_z, ev


# --------------------------------------------------------------------------
# diffusion on the three-edge graph


@njit(cache=True, inline="always")
def _vbar(vtab, span, edge, d, vinf):
    if d >= span:
        return vinf
    K = vtab.shape[1] - 1
    x = d / span * K
    k = int(x)
    if k >= K:
        return vtab[edge, K]
    w = x - k
    return vtab[edge, k] + w * (vtab[edge, k + 1] - vtab[edge, k])


@njit(cache=True)
def run_graph(vtab, span, vinf, weights, edge, d, T, dt, out_dt, exit_radius, s,
              rec_e, rec_z, ev):
    """Walsh-type Euler scheme on the star graph.

    The state is ``(edge, d)`` with ``d >= 0`` the distance to the vertex; the
    signed coordinate is ``-d`` on edge 0.  A step that reaches or crosses the
    vertex parks the walker there; the next step leaves along edge ``e`` with
    probability ``weights[e]`` at distance ``|N(0, h) + outward drift * h|``.
    Returns ``(t, edge, d, status, n_emissions)``; status 1 marks reaching
    ``d >= exit_radius``.  Emissions ``(t, edge)`` are stored in ``ev`` up to
    its capacity.
    """
    t = 0.0
    nrec = rec_e.shape[0]
    row = 0
    t_next = np.inf
    if nrec > 0:
        rec_e[0] = edge if d > 0.0 else 0
        rec_z[0] = -d if edge == 0 else d
        row = 1
        t_next = out_dt
    if d >= exit_radius:
        return t, edge, d, ST_HI, 0
    visits = 0
    status = ST_HORIZON
    tol = 1e-13 * max(T, 1.0)
    while T - t > tol:
        h = min(dt, T - t)
        if nrec > 0:
            h = min(h, t_next - t)
        if d == 0.0:
            u = uniform(s)
            e = 2
            if u < weights[0]:
                e = 0
            elif u < weights[0] + weights[1]:
                e = 1
            sgn = -1.0 if e == 0 else 1.0
            d1 = abs(math.sqrt(h) * normal(s) + sgn * _vbar(vtab, span, e, 0.0, vinf) * h)
            edge = e
            if visits < ev.shape[0]:
                ev[visits, 0] = t
                ev[visits, 1] = e
            visits += 1
        else:
            sgn = -1.0 if edge == 0 else 1.0
            d1 = d + sgn * _vbar(vtab, span, edge, d, vinf) * h + math.sqrt(h) * normal(s)
            if d1 <= 0.0:
                d1 = 0.0
                edge = 0
        if d1 >= exit_radius:
            phi = (exit_radius - d) / (d1 - d) if d1 > d else 0.0
            t += phi * h
            d = exit_radius
            status = ST_HI
            break
        d = d1
        t += h
        if nrec > 0 and t >= t_next - 1e-12 * out_dt:
            t = t_next
            rec_e[row] = edge if d > 0.0 else 0
            rec_z[row] = -d if edge == 0 else d
            row += 1
            t_next = out_dt * row if row < nrec else np.inf
    return t, edge, d, status, visits


@njit(parallel=True, cache=True)
def graph_ensemble(vtab, span, vinf, weights, edge0, d0, T, dt, out_dt, exit_radius,
                   seed, stream0, rec_e, rec_z):
    P = edge0.shape[0]
    out_t = np.empty(P)
    out_e = np.empty(P, np.int64)
    out_d = np.empty(P)
    out_status = np.empty(P, np.int64)
    out_emit = np.empty(P, np.int64)
    for p in prange(P):
        s = seed_state(seed, stream0 + p)
        ev = np.empty((0, 2))
        res = run_graph(vtab, span, vinf, weights, edge0[p], d0[p], T, dt, out_dt,
                        exit_radius, s, rec_e[p], rec_z[p], ev)
        out_t[p] = res[0]
        out_e[p] = res[1]
        out_d[p] = res[2]
        out_status[p] = res[3]
        out_emit[p] = res[4]
    return out_t, out_e, out_d, out_status, out_emit


@njit(cache=True)
def graph_single(vtab, span, vinf, weights, edge0, d0, T, dt, out_dt, exit_radius,
                 seed, stream, ev_cap, nrec):
    s = seed_state(seed, stream)
    rec_e = np.zeros(nrec, np.int8)
    rec_z = np.zeros(nrec)
    ev = np.zeros((ev_cap, 2))
    res = run_graph(vtab, span, vinf, weights, edge0, d0, T, dt, out_dt, exit_radius, s,
                    rec_e, rec_z, ev)
    return res, rec_e, rec_z, ev


@njit(parallel=True, cache=True)
def line_ensemble(xs, vs, vinf, z0, T, dt, seed, stream0):
    """Euler-Maruyama for ``dz = v(z) dt + dW`` on the line, ``v`` tabulated on ``xs``."""
    P = z0.shape[0]
    out = np.empty(P)
    lo, hi = xs[0], xs[-1]
    K = xs.shape[0] - 1
    step = (hi - lo) / K
    for p in prange(P):
        s = seed_state(seed, stream0 + p)
        z = z0[p]
        t = 0.0
        while T - t > 1e-13 * max(T, 1.0):
            h = min(dt, T - t)
            if z <= lo or z >= hi:
                v = vinf
            else:
                x = (z - lo) / step
                k = min(int(x), K - 1)
                w = x - k
                v = vs[k] + w * (vs[k + 1] - vs[k])
            z = z + v * h + math.sqrt(h) * normal(s)
            t += h
        out[p] = z
    return out
