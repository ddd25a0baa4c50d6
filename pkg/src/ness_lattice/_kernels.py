"""Compiled inner loops.

State vectors are flat with layout ``(q_0..q_{n-1}, p_0..p_{n-1}, r_0..r_{m-1})``.
All kernels advance ``x`` in place and consume one row of ``noise`` per step.
No reductions depend on array length, so results are bit-identical however a
run is chunked.
"""

import math

import numpy as np
from numba import njit

OK = 0
NONFINITE = 1
ENERGY_CAP = 2

SPLITTING = 0
EULER_MARUYAMA = 1


@njit(cache=True, nogil=True)
def polyval(c, x):
    acc = c[c.size - 1]
    for k in range(c.size - 2, -1, -1):
        acc = acc * x + c[k]
    return acc


@njit(cache=True, nogil=True)
def force(x, n, d1, d2, ei, ej, out):
    """``out = -grad V(q)``."""
    for i in range(n):
        out[i] = -polyval(d1, x[i])
    for e in range(ei.size):
        a = ei[e]
        b = ej[e]
        f = polyval(d2, x[a] - x[b])
        out[a] -= f
        out[b] += f


@njit(cache=True, nogil=True)
def energy_G(x, n, c1, c2, ei, ej):
    g = 0.0
    for i in range(n):
        g += 0.5 * x[n + i] * x[n + i] + polyval(c1, x[i])
    for e in range(ei.size):
        g += polyval(c2, x[ei[e]] - x[ej[e]])
    for k in range(2 * n, x.size):
        g += 0.5 * x[k] * x[k]
    return g


@njit(cache=True, nogil=True)
def _ou_blocks(x, z, off, blk_idx, blk_k, blk_phi, blk_l, tmp, new):
    for b in range(blk_k.size):
        k = blk_k[b]
        for j in range(k):
            tmp[j] = x[blk_idx[b, j]]
        for i in range(k):
            acc = 0.0
            for j in range(k):
                acc += blk_phi[b, i, j] * tmp[j]
            for j in range(k):
                acc += blk_l[b, i, j] * z[off + j]
            new[i] = acc
        for i in range(k):
            x[blk_idx[b, i]] = new[i]
        off += k
    return off


@njit(cache=True, nogil=True)
def _finite(x):
    for k in range(x.size):
        if not math.isfinite(x[k]):
            return False
    return True


@njit(cache=True, nogil=True)
def run(
    x,
    step0,
    n_steps,
    stride,
    record,
    dt,
    scheme,
    noise,
    n,
    c1,
    d1,
    c2,
    d2,
    ei,
    ej,
    aux_v,
    aux_lam,
    aux_gam,
    lang_v,
    lang_lam,
    blk_idx,
    blk_k,
    blk_phi,
    blk_l,
    em_idx,
    em_amp,
    cap,
    out,
):
    """Advance ``x`` by ``n_steps`` steps.

    Samples are written to ``out`` whenever the global step index
    ``step0 + s`` (after the step) is a multiple of ``stride`` and ``record``
    is true.  Returns ``(status, steps_done, samples_written)``.
    """
    dim = x.size
    f = np.empty(n)
    force(x, n, d1, d2, ei, ej, f)
    kmax = blk_idx.shape[1] if blk_idx.shape[0] > 0 else 1
    tmp = np.empty(kmax)
    new = np.empty(kmax)
    drift = np.empty(dim)
    half = 0.5 * dt
    sq = math.sqrt(dt)
    written = 0
    for s in range(n_steps):
        z = noise[s]
        if scheme == SPLITTING:
            off = _ou_blocks(x, z, 0, blk_idx, blk_k, blk_phi, blk_l, tmp, new)
            for i in range(n):
                x[n + i] += half * f[i]
            for i in range(n):
                x[i] += dt * x[n + i]
            force(x, n, d1, d2, ei, ej, f)
            for i in range(n):
                x[n + i] += half * f[i]
            _ou_blocks(x, z, off, blk_idx, blk_k, blk_phi, blk_l, tmp, new)
        else:
            for i in range(n):
                drift[i] = x[n + i]
                drift[n + i] = f[i]
            for a in range(aux_v.size):
                v = aux_v[a]
                drift[n + v] -= aux_lam[a] * x[2 * n + a]
                drift[2 * n + a] = -aux_gam[a] * x[2 * n + a] + aux_lam[a] * x[n + v]
            for a in range(lang_v.size):
                v = lang_v[a]
                drift[n + v] -= lang_lam[a] * x[n + v]
            for k in range(dim):
                x[k] += dt * drift[k]
            for k in range(em_idx.size):
                x[em_idx[k]] += em_amp[k] * sq * z[k]
            force(x, n, d1, d2, ei, ej, f)
        if not _finite(x):
            return NONFINITE, s + 1, written
        if cap > 0.0 and energy_G(x, n, c1, c2, ei, ej) > cap:
            return ENERGY_CAP, s + 1, written
        if record and (step0 + s + 1) % stride == 0:
            for k in range(dim):
                out[written, k] = x[k]
            written += 1
    return OK, n_steps, written


@njit(cache=True, nogil=True)
def run_gle(state, step0, n_steps, stride, dt, lam, gam, temp, dveff, noise, out):
    """Single particle with exponential memory, integrated directly.

    ``state = (q, p, M, xi)`` where ``M`` is the memory integral
    ``int_0^t lam^2 exp(-gam (t-s)) p(s) ds`` and ``xi`` the colored force.
    """
    decay = math.exp(-gam * dt)
    gain = lam * lam * (1.0 - decay) / gam
    xi_amp = abs(lam) * math.sqrt(temp * (1.0 - decay * decay))
    half = 0.5 * dt
    q = state[0]
    p = state[1]
    m = state[2]
    xi = state[3]
    written = 0
    for s in range(n_steps):
        p += half * (-polyval(dveff, q) - m - xi)
        q += dt * p
        m = decay * m + gain * p
        xi = decay * xi + xi_amp * noise[s]
        p += half * (-polyval(dveff, q) - m - xi)
        if not (math.isfinite(p) and math.isfinite(q)):
            state[0] = q
            state[1] = p
            return NONFINITE, s + 1, written
        if (step0 + s + 1) % stride == 0:
            out[written, 0] = q
            out[written, 1] = p
            out[written, 2] = m
            out[written, 3] = xi
            written += 1
    state[0] = q
    state[1] = p
    state[2] = m
    state[3] = xi
    return OK, n_steps, written
