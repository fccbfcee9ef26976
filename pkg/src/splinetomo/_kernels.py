"""Compiled inner loops: contribution network, DDA traversal, sparse ray entries.

Conventions shared by every kernel:

* cell ``k`` of the lattice spans ``[k - 1/2, k + 1/2)`` on each axis, so basis
  centres sit at cell centres;
* a volume is described by its lattice ``origin`` (index of array element 0)
  and ``shape``; flat indices are k1-major;
* MLP parameters are packed layer by layer as ``W (n_in x n_out)`` row-major
  followed by ``b (n_out)``; ``sizes`` lists the layer widths.
"""

import math
import warnings

import numpy as np
from numba import njit, prange

# an outdated system TBB is skipped by numba anyway; the warning is noise
warnings.filterwarnings("ignore", message="The TBB threading layer requires")

HALF_WIDTH = 1.5
# (p2, p3) in [-3, 3] and slopes in [0, 1] are mapped to roughly [-2, 2] / [-1, 1]
_P_SCALE = 1.0 / 1.5
_MAX_WIDTH = 512
_MAX_PLANE_CELLS = 8
N_CHUNKS = 16


@njit(cache=True)
def canonical_features(ox, oy, oz, sx, sy, sz, feat):
    """Map a line to the invariant features of the contribution network.

    The generator is invariant under signed axis permutations, so the line is
    first reflected to have nonnegative direction components and permuted so
    that they decrease (stable on ties).  The line is then described by its
    crossing point (p2, p3) with the plane orthogonal to the dominant axis and
    its lateral slopes (m2, m3).  Returns ``1 / |omega_dominant|``, the factor
    turning an integral over the dominant coordinate into one over arc length.
    """
    w = (abs(ox), abs(oy), abs(oz))
    t0 = sx if ox >= 0 else -sx
    t1 = sy if oy >= 0 else -sy
    t2 = sz if oz >= 0 else -sz
    # stable descending sort of three (w, t) pairs
    a0, a1, a2 = w[0], w[1], w[2]
    b0, b1, b2 = t0, t1, t2
    if a1 > a0:
        a0, a1 = a1, a0
        b0, b1 = b1, b0
    if a2 > a1:
        a1, a2 = a2, a1
        b1, b2 = b2, b1
        if a1 > a0:
            a0, a1 = a1, a0
            b0, b1 = b1, b0
    m2 = a1 / a0
    m3 = a2 / a0
    feat[0] = (b1 - b0 * m2) * _P_SCALE
    feat[1] = (b2 - b0 * m3) * _P_SCALE
    feat[2] = 2.0 * m2 - 1.0
    feat[3] = 2.0 * m3 - 1.0
    return 1.0 / a0


@njit(cache=True)
def hits_support(ox, oy, oz, rx, ry, rz):
    """True iff the line ``r + t omega`` meets the open cube ``(-3/2, 3/2)^3``."""
    lo = -np.inf
    hi = np.inf
    for o, r in ((ox, rx), (oy, ry), (oz, rz)):
        if o == 0.0:
            if not (abs(r) < HALF_WIDTH):
                return False
        else:
            t1 = (-HALF_WIDTH - r) / o
            t2 = (HALF_WIDTH - r) / o
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > lo:
                lo = t1
            if t2 < hi:
                hi = t2
    return lo < hi


_GL_X = np.array([-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526])
_GL_W = np.array([0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538])


@njit(cache=True)
def _b2(x):
    a = abs(x)
    if a <= 0.5:
        return 0.75 - a * a
    if a <= 1.5:
        return 0.5 * (1.5 - a) ** 2
    return 0.0


@njit(cache=True, parallel=True)
def exact_integrals(omegas, offsets):
    """Exact line integrals of the generator: 4-point Gauss-Legendre on every
    piece between consecutive knot crossings (compiled twin of
    ``bspline.exact_project``, used to label training batches)."""
    n = omegas.shape[0]
    out = np.zeros(n)
    for r in prange(n):
        lo = -np.inf
        hi = np.inf
        miss = False
        for d in range(3):
            o = omegas[r, d]
            x = offsets[r, d]
            if o == 0.0:
                if not abs(x) < HALF_WIDTH:
                    miss = True
            else:
                t1 = (-HALF_WIDTH - x) / o
                t2 = (HALF_WIDTH - x) / o
                if t1 > t2:
                    t1, t2 = t2, t1
                lo = max(lo, t1)
                hi = min(hi, t2)
        if miss or not lo < hi:
            continue
        bp = np.empty(14)
        bp[0] = lo
        m = 1
        for d in range(3):
            o = omegas[r, d]
            if o == 0.0:
                continue
            for knot in (-1.5, -0.5, 0.5, 1.5):
                t = (knot - offsets[r, d]) / o
                if lo < t < hi:
                    bp[m] = t
                    m += 1
        bp[m] = hi
        m += 1
        for i in range(1, m):  # insertion sort, at most 14 entries
            v = bp[i]
            j = i - 1
            while j >= 0 and bp[j] > v:
                bp[j + 1] = bp[j]
                j -= 1
            bp[j + 1] = v
        acc = 0.0
        for i in range(m - 1):
            mid = 0.5 * (bp[i] + bp[i + 1])
            half = 0.5 * (bp[i + 1] - bp[i])
            piece = 0.0
            for g in range(4):
                t = mid + half * _GL_X[g]
                piece += _GL_W[g] * (_b2(offsets[r, 0] + t * omegas[r, 0])
                                     * _b2(offsets[r, 1] + t * omegas[r, 1])
                                     * _b2(offsets[r, 2] + t * omegas[r, 2]))
            acc += half * piece
        out[r] = acc
    return out


@njit(cache=True)
def mlp_forward(params, sizes, feat, h0, h1):
    n_layers = sizes.shape[0] - 1
    for j in range(sizes[0]):
        h0[j] = feat[j]
    off = 0
    for layer in range(n_layers):
        n_in = sizes[layer]
        n_out = sizes[layer + 1]
        bias = off + n_in * n_out
        for j in range(n_out):
            h1[j] = params[bias + j]
        for i in range(n_in):
            hi = h0[i]
            row = off + i * n_out
            for j in range(n_out):
                h1[j] += hi * params[row + j]
        off = bias + n_out
        if layer < n_layers - 1:
            for j in range(n_out):
                z = h1[j]
                h0[j] = z / math.sqrt(1.0 + z * z)
        else:
            for j in range(n_out):
                h0[j] = h1[j]
    return h0[0]


@njit(cache=True)
def contribution(params, sizes, ox, oy, oz, rx, ry, rz, feat, h0, h1):
    """Learned line integral of the generator: gated by the exact support test
    and clamped at zero."""
    if not hits_support(ox, oy, oz, rx, ry, rz):
        return 0.0
    scale = canonical_features(ox, oy, oz, rx, ry, rz, feat)
    v = mlp_forward(params, sizes, feat, h0, h1) * scale
    return v if v > 0.0 else 0.0


@njit(cache=True)
def contribution_batch(params, sizes, omegas, offsets):
    n = omegas.shape[0]
    out = np.empty(n)
    feat = np.empty(4)
    h0 = np.empty(_MAX_WIDTH)
    h1 = np.empty(_MAX_WIDTH)
    for r in range(n):
        out[r] = contribution(params, sizes, omegas[r, 0], omegas[r, 1], omegas[r, 2],
                              offsets[r, 0], offsets[r, 1], offsets[r, 2], feat, h0, h1)
    return out


@njit(cache=True)
def dominant(ox, oy, oz):
    a = abs(ox)
    d = 0
    if abs(oy) > a:
        a = abs(oy)
        d = 1
    if abs(oz) > a:
        d = 2
    return d


@njit(cache=True)
def dda_setup(omega, s, lo_idx, hi_idx, k, step, t_max, t_delta):
    """Clip the line to the cell box ``[lo_idx - 1/2, hi_idx + 1/2]`` and set up
    Amanatides-Woo state.  Returns ``(t_in, t_out)``; inactive iff ``t_in >= t_out``."""
    t_in = -np.inf
    t_out = np.inf
    for i in range(3):
        lo = lo_idx[i] - 0.5
        hi = hi_idx[i] + 0.5
        if omega[i] == 0.0:
            if s[i] < lo or s[i] >= hi:
                return 0.0, 0.0
        else:
            t1 = (lo - s[i]) / omega[i]
            t2 = (hi - s[i]) / omega[i]
            if t1 > t2:
                t1, t2 = t2, t1
            if t1 > t_in:
                t_in = t1
            if t2 < t_out:
                t_out = t2
    if not t_in < t_out:
        return t_in, t_in
    for i in range(3):
        p = s[i] + t_in * omega[i]
        ki = int(math.floor(p + 0.5))
        if ki < lo_idx[i]:
            ki = lo_idx[i]
        if ki > hi_idx[i]:
            ki = hi_idx[i]
        k[i] = ki
        if omega[i] > 0.0:
            step[i] = 1
            t_delta[i] = 1.0 / omega[i]
            t_max[i] = (ki + 0.5 - s[i]) / omega[i]
        elif omega[i] < 0.0:
            step[i] = -1
            t_delta[i] = -1.0 / omega[i]
            t_max[i] = (ki - 0.5 - s[i]) / omega[i]
        else:
            step[i] = 0
            t_delta[i] = np.inf
            t_max[i] = np.inf
    return t_in, t_out


@njit(cache=True)
def dda_advance(k, step, t_max, t_delta, lo_idx, hi_idx):
    """One DDA step along the axis of smallest ``t_max`` (ties: smallest axis).
    Returns ``(axis, t_cross, still_active)``."""
    a = 0
    if t_max[1] < t_max[a]:
        a = 1
    if t_max[2] < t_max[a]:
        a = 2
    t_cross = t_max[a]
    k[a] += step[a]
    t_max[a] += t_delta[a]
    active = lo_idx[a] <= k[a] <= hi_idx[a]
    return a, t_cross, active


@njit(cache=True)
def trace_cells(omega, s, lo_idx, hi_idx, max_cells):
    """Visited cells of the DDA walk through the given cell box (for tests)."""
    k = np.empty(3, np.int64)
    step = np.empty(3, np.int64)
    t_max = np.empty(3)
    t_delta = np.empty(3)
    out = np.empty((max_cells, 3), np.int64)
    t_in, t_out = dda_setup(omega, s, lo_idx, hi_idx, k, step, t_max, t_delta)
    n = 0
    if not t_in < t_out:
        return out[:0]
    active = True
    while active and n < max_cells:
        out[n] = k
        n += 1
        _, _, active = dda_advance(k, step, t_max, t_delta, lo_idx, hi_idx)
    return out[:n]


@njit(cache=True)
def spline_ray(omega, s, origin, shape, margin, params, sizes, mode, out_idx, out_w,
               feat, h0, h1):
    """Enumerate the basis functions contributing to one ray.

    mode 0: count gated entries only; mode 1: write flat indices and learned
    contributions; mode 2: write every window candidate (no gate, weight 1),
    used to audit the no-double-count property.  Returns the entry count.
    """
    d = dominant(omega[0], omega[1], omega[2])
    lo_idx = np.empty(3, np.int64)
    hi_idx = np.empty(3, np.int64)
    for i in range(3):
        pad = 0 if i == d else margin
        lo_idx[i] = origin[i] - pad
        hi_idx[i] = origin[i] + shape[i] - 1 + pad
    k = np.empty(3, np.int64)
    step = np.empty(3, np.int64)
    t_max = np.empty(3)
    t_delta = np.empty(3)
    t_in, t_out = dda_setup(omega, s, lo_idx, hi_idx, k, step, t_max, t_delta)
    if not t_in < t_out:
        return 0
    i1 = (d + 1) % 3
    i2 = (d + 2) % 3
    # window centres of earlier cells in the current dominant-axis plane
    prev = np.empty((_MAX_PLANE_CELLS, 2), np.int64)
    n_prev = 0
    plane = k[d] - 1
    n = 0
    active = True
    while active:
        if k[d] != plane:
            plane = k[d]
            n_prev = 0
        qd = k[d] - origin[d]
        if 0 <= qd < shape[d]:
            a_lo = max(k[i1] - margin, origin[i1])
            a_hi = min(k[i1] + margin, origin[i1] + shape[i1] - 1)
            b_lo = max(k[i2] - margin, origin[i2])
            b_hi = min(k[i2] + margin, origin[i2] + shape[i2] - 1)
            for qa in range(a_lo, a_hi + 1):
                for qb in range(b_lo, b_hi + 1):
                    seen = False
                    for p in range(n_prev):
                        if abs(qa - prev[p, 0]) <= margin and abs(qb - prev[p, 1]) <= margin:
                            seen = True
                            break
                    if seen:
                        continue
                    if d == 0:
                        q0, q1, q2 = k[d], qa, qb
                    elif d == 1:
                        q0, q1, q2 = qb, k[d], qa
                    else:
                        q0, q1, q2 = qa, qb, k[d]
                    if mode == 2:
                        out_idx[n] = ((q0 - origin[0]) * shape[1] + q1 - origin[1]) * shape[2] + q2 - origin[2]
                        out_w[n] = 1.0
                        n += 1
                        continue
                    # offset of the line relative to basis q, projected onto H_omega
                    r0 = s[0] - q0
                    r1 = s[1] - q1
                    r2 = s[2] - q2
                    dot = r0 * omega[0] + r1 * omega[1] + r2 * omega[2]
                    r0 -= dot * omega[0]
                    r1 -= dot * omega[1]
                    r2 -= dot * omega[2]
                    if not hits_support(omega[0], omega[1], omega[2], r0, r1, r2):
                        continue
                    if mode == 1:
                        out_idx[n] = ((q0 - origin[0]) * shape[1] + q1 - origin[1]) * shape[2] + q2 - origin[2]
                        scale = canonical_features(omega[0], omega[1], omega[2], r0, r1, r2, feat)
                        v = mlp_forward(params, sizes, feat, h0, h1) * scale
                        out_w[n] = v if v > 0.0 else 0.0
                    n += 1
        if n_prev < _MAX_PLANE_CELLS:
            prev[n_prev, 0] = k[i1]
            prev[n_prev, 1] = k[i2]
            n_prev += 1
        _, _, active = dda_advance(k, step, t_max, t_delta, lo_idx, hi_idx)
    return n


@njit(cache=True)
def voxel_ray(omega, s, origin, shape, mode, out_idx, out_w):
    """Amanatides-Woo chord lengths through the volume's cells.

    mode 0 counts cells, mode 1 writes flat indices and chord lengths."""
    lo_idx = np.empty(3, np.int64)
    hi_idx = np.empty(3, np.int64)
    for i in range(3):
        lo_idx[i] = origin[i]
        hi_idx[i] = origin[i] + shape[i] - 1
    k = np.empty(3, np.int64)
    step = np.empty(3, np.int64)
    t_max = np.empty(3)
    t_delta = np.empty(3)
    t_in, t_out = dda_setup(omega, s, lo_idx, hi_idx, k, step, t_max, t_delta)
    if not t_in < t_out:
        return 0
    n = 0
    t_cur = t_in
    active = True
    while active:
        kk0 = k[0] - origin[0]
        kk1 = k[1] - origin[1]
        kk2 = k[2] - origin[2]
        a = 0
        if t_max[1] < t_max[a]:
            a = 1
        if t_max[2] < t_max[a]:
            a = 2
        t_next = min(t_max[a], t_out)
        chord = t_next - t_cur
        if chord > 0.0:
            if mode == 1:
                out_idx[n] = (kk0 * shape[1] + kk1) * shape[2] + kk2
                out_w[n] = chord
            n += 1
        t_cur = t_next
        if t_cur >= t_out:
            break
        _, _, active = dda_advance(k, step, t_max, t_delta, lo_idx, hi_idx)
    return n


@njit(cache=True)
def spline_capacity(shape, margin):
    # planes crossed x full window
    w = 2 * margin + 1
    return (max(shape[0], max(shape[1], shape[2])) + 2) * 3 * w * w


@njit(parallel=True, cache=True)
def count_entries(kind, omegas, offsets, origin, shape, margin, params, sizes):
    n_rays = omegas.shape[0]
    counts = np.zeros(n_rays, np.int64)
    cap = spline_capacity(shape, margin)
    for r in prange(n_rays):
        idx = np.empty(0, np.int64)
        w = np.empty(0)
        feat = np.empty(4)
        h0 = np.empty(1)
        h1 = np.empty(1)
        if kind == 0:
            counts[r] = spline_ray(omegas[r], offsets[r], origin, shape, margin, params, sizes,
                                   0, idx, w, feat, h0, h1)
        else:
            counts[r] = voxel_ray(omegas[r], offsets[r], origin, shape, 0, idx, w)
    return counts, cap


@njit(parallel=True, cache=True)
def fill_entries(kind, omegas, offsets, origin, shape, margin, params, sizes, indptr,
                 indices, data):
    n_rays = omegas.shape[0]
    for r in prange(n_rays):
        a = indptr[r]
        b = indptr[r + 1]
        feat = np.empty(4)
        h0 = np.empty(_MAX_WIDTH)
        h1 = np.empty(_MAX_WIDTH)
        idx = np.empty(b - a, np.int64)
        w = np.empty(b - a)
        if kind == 0:
            spline_ray(omegas[r], offsets[r], origin, shape, margin, params, sizes, 1, idx, w,
                       feat, h0, h1)
        else:
            voxel_ray(omegas[r], offsets[r], origin, shape, 1, idx, w)
        for j in range(b - a):
            indices[a + j] = idx[j]
            data[a + j] = w[j]


@njit(parallel=True, cache=True)
def project_rays(kind, omegas, offsets, origin, shape, margin, params, sizes, coeffs):
    """On-the-fly forward projection; one disjoint output slot per ray."""
    n_rays = omegas.shape[0]
    out = np.zeros(n_rays)
    cap = spline_capacity(shape, margin)
    for r in prange(n_rays):
        feat = np.empty(4)
        h0 = np.empty(_MAX_WIDTH)
        h1 = np.empty(_MAX_WIDTH)
        idx = np.empty(cap, np.int64)
        w = np.empty(cap)
        if kind == 0:
            n = spline_ray(omegas[r], offsets[r], origin, shape, margin, params, sizes, 1, idx,
                           w, feat, h0, h1)
        else:
            n = voxel_ray(omegas[r], offsets[r], origin, shape, 1, idx, w)
        acc = 0.0
        for j in range(n):
            acc += coeffs[idx[j]] * w[j]
        out[r] = acc
    return out


@njit(parallel=True, cache=True)
def backproject_rays(kind, omegas, offsets, origin, shape, margin, params, sizes, values):
    """On-the-fly adjoint.  Rays are split into ``N_CHUNKS`` fixed contiguous
    chunks with private accumulators summed in chunk order, so the result does
    not depend on the number of threads."""
    n_rays = omegas.shape[0]
    n_vox = shape[0] * shape[1] * shape[2]
    acc = np.zeros((N_CHUNKS, n_vox))
    cap = spline_capacity(shape, margin)
    for c in prange(N_CHUNKS):
        r0 = (n_rays * c) // N_CHUNKS
        r1 = (n_rays * (c + 1)) // N_CHUNKS
        feat = np.empty(4)
        h0 = np.empty(_MAX_WIDTH)
        h1 = np.empty(_MAX_WIDTH)
        idx = np.empty(cap, np.int64)
        w = np.empty(cap)
        for r in range(r0, r1):
            if values[r] == 0.0:
                continue
            if kind == 0:
                n = spline_ray(omegas[r], offsets[r], origin, shape, margin, params, sizes, 1,
                               idx, w, feat, h0, h1)
            else:
                n = voxel_ray(omegas[r], offsets[r], origin, shape, 1, idx, w)
            for j in range(n):
                acc[c, idx[j]] += values[r] * w[j]
    out = np.zeros(n_vox)
    for c in range(N_CHUNKS):
        for v in range(n_vox):
            out[v] += acc[c, v]
    return out


@njit(parallel=True, cache=True)
def csr_matvec(indptr, indices, data, x):
    n = indptr.shape[0] - 1
    out = np.zeros(n)
    for r in prange(n):
        acc = 0.0
        for j in range(indptr[r], indptr[r + 1]):
            acc += x[indices[j]] * data[j]
        out[r] = acc
    return out


@njit(parallel=True, cache=True)
def csr_rmatvec(indptr, indices, data, y, n_cols):
    n = indptr.shape[0] - 1
    acc = np.zeros((N_CHUNKS, n_cols))
    for c in prange(N_CHUNKS):
        r0 = (n * c) // N_CHUNKS
        r1 = (n * (c + 1)) // N_CHUNKS
        for r in range(r0, r1):
            yr = y[r]
            if yr == 0.0:
                continue
            for j in range(indptr[r], indptr[r + 1]):
                acc[c, indices[j]] += yr * data[j]
    out = np.zeros(n_cols)
    for c in range(N_CHUNKS):
        for v in range(n_cols):
            out[v] += acc[c, v]
    return out
