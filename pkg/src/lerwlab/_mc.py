# Batch per-trial kernels.  Each returns integer observations so that sums are exact.
import numba as nb
import numpy as np

from .loop_erasure import ilerw_kernel, lerw_kernel, loop_erase_grid
from .rng import new_stream, next_u64
from .sitegrid import cell
from .walks import _DX, _DY, _DZ, conditioned_kernel

_CAP = 1024


@nb.njit(cache=True)
def _observe(eta, k, targets, centers, rad2, out, i):
    out[i, 0] = k - 1
    nt = targets.shape[0]
    for j in range(nt):
        tx, ty, tz = targets[j, 0], targets[j, 1], targets[j, 2]
        for q in range(k):
            if eta[q, 0] == tx and eta[q, 1] == ty and eta[q, 2] == tz:
                out[i, 1 + j] = 1
                break
    for j in range(centers.shape[0]):
        cx, cy, cz = centers[j, 0], centers[j, 1], centers[j, 2]
        lim = rad2[j]
        for q in range(k):
            dx = eta[q, 0] - cx
            dy = eta[q, 1] - cy
            dz = eta[q, 2] - cz
            if dx * dx + dy * dy + dz * dz <= lim:
                out[i, 1 + nt + j] = 1
                break


@nb.njit(cache=True)
def lerw_trials(seed, t0, t1, sub, r2, r2_outer, targets, centers, rad2, cells, off, nbricks):
    """LERW (or truncated ILERW when r2_outer > r2) observations for trials t0..t1-1."""
    out = np.zeros((t1 - t0, 1 + targets.shape[0] + centers.shape[0]), dtype=np.int64)
    buf = np.empty((_CAP, 3), dtype=np.int64)
    for i in range(t1 - t0):
        st = new_stream(seed, t0 + i, sub)
        if r2_outer > r2:
            eta, buf = ilerw_kernel(st, r2, r2_outer, buf, cells, off, nbricks)
        else:
            eta, buf, _ = lerw_kernel(st, r2, buf, cells, off, nbricks)
        _observe(eta, len(eta), targets, centers, rad2, out, i)
    return out


@nb.njit(cache=True)
def _mark(eta, k, cells, off, nbricks, v):
    for q in range(k):
        cells[cell(eta[q, 0], eta[q, 1], eta[q, 2], off, nbricks)] = v


@nb.njit(cache=True)
def _walk_hits_marked(st, x, y, z, r2, cells, off, nbricks):
    # walk from (x, y, z); True if some point at times 1..T (T = first |p|^2 >= r2) is marked
    bits = np.uint64(0)
    nbits = 0
    while True:
        if nbits < 3:
            bits = next_u64(st)
            nbits = 63
        v = np.int64(bits & np.uint64(7))
        bits >>= np.uint64(3)
        nbits -= 3
        if v >= 6:
            continue
        x += _DX[v]
        y += _DY[v]
        z += _DZ[v]
        if cells[cell(x, y, z, off, nbricks)] >= 0:
            return True
        if x * x + y * y + z * z >= r2:
            return False


@nb.njit(cache=True)
def es_trials(seed, t0, t1, r2, cells, off, nbricks):
    """1{LE(S[0, T]) and S'[1, T'] are disjoint}; S uses substream 0, S' substream 1."""
    out = np.zeros((t1 - t0, 1), dtype=np.int64)
    buf = np.empty((_CAP, 3), dtype=np.int64)
    for i in range(t1 - t0):
        eta, buf, _ = lerw_kernel(new_stream(seed, t0 + i, 0), r2, buf, cells, off, nbricks)
        _mark(eta, len(eta), cells, off, nbricks, 1)
        hit = _walk_hits_marked(new_stream(seed, t0 + i, 1), 0, 0, 0, r2, cells, off, nbricks)
        _mark(eta, len(eta), cells, off, nbricks, -1)
        out[i, 0] = 0 if hit else 1
    return out


@nb.njit(cache=True)
def decompose_trials(seed, t0, t1, h, hoff, x, y, z, r2, cells, off, nbricks):
    """1{LE(X) and Y[1, T] are disjoint}: X from x conditioned to hit 0 (substream 0), Y from x (substream 1)."""
    out = np.zeros((t1 - t0, 1), dtype=np.int64)
    buf = np.empty((_CAP, 3), dtype=np.int64)
    for i in range(t1 - t0):
        buf, n = conditioned_kernel(new_stream(seed, t0 + i, 0), h, hoff, x, y, z, 0, 0, 0, buf)
        eta = loop_erase_grid(buf, n, cells, off, nbricks)
        _mark(eta, len(eta), cells, off, nbricks, 1)
        hit = _walk_hits_marked(new_stream(seed, t0 + i, 1), x, y, z, r2, cells, off, nbricks)
        _mark(eta, len(eta), cells, off, nbricks, -1)
        out[i, 0] = 0 if hit else 1
    return out


@nb.njit(cache=True)
def neighborhood_count(pts, lower, upper, r, pitch):
    """Number of sampling-grid points of the box [lower, upper] within distance r of some row of ``pts``.

    The grid has cell centers lower + (i + 1/2) pitch.  Candidate points are
    bucketed in cubes of side r, so each query scans at most 27 buckets.
    """
    ns = np.empty(3, dtype=np.int64)
    dims = np.empty(3, dtype=np.int64)
    glo = np.empty(3)
    for a in range(3):
        ns[a] = np.int64(np.round((upper[a] - lower[a]) / pitch))
        glo[a] = lower[a] - r
        dims[a] = np.int64(np.floor((upper[a] - lower[a] + 2 * r) / r)) + 1
    ncell = dims[0] * dims[1] * dims[2]
    # bucket the candidates (counting sort)
    cid = np.full(len(pts), -1, dtype=np.int64)
    head = np.zeros(ncell + 1, dtype=np.int64)
    for q in range(len(pts)):
        c = np.int64(0)
        ok = True
        for a in range(3):
            v = pts[q, a]
            if v < lower[a] - r or v > upper[a] + r:
                ok = False
                break
            ci = min(np.int64(np.floor((v - glo[a]) / r)), dims[a] - 1)
            c = c * dims[a] + ci
        if ok:
            cid[q] = c
            head[c + 1] += 1
    for c in range(ncell):
        head[c + 1] += head[c]
    order = np.empty(head[ncell], dtype=np.int64)
    fill = head[:ncell].copy()
    for q in range(len(pts)):
        if cid[q] >= 0:
            order[fill[cid[q]]] = q
            fill[cid[q]] += 1
    if head[ncell] == 0:
        return 0
    cand = np.empty((head[ncell], 3))
    r2 = r * r
    count = 0
    cur = -1
    nc = 0
    for i in range(ns[0]):
        px = lower[0] + (i + 0.5) * pitch
        cx = np.int64(np.floor((px - glo[0]) / r))
        for j in range(ns[1]):
            py = lower[1] + (j + 0.5) * pitch
            cy = np.int64(np.floor((py - glo[1]) / r))
            for k in range(ns[2]):
                pz = lower[2] + (k + 0.5) * pitch
                cz = np.int64(np.floor((pz - glo[2]) / r))
                c = (cx * dims[1] + cy) * dims[2] + cz
                if c != cur:
                    cur = c
                    nc = 0
                    for ax in range(max(cx - 1, 0), min(cx + 2, dims[0])):
                        for ay in range(max(cy - 1, 0), min(cy + 2, dims[1])):
                            for az in range(max(cz - 1, 0), min(cz + 2, dims[2])):
                                b = (ax * dims[1] + ay) * dims[2] + az
                                for t in range(head[b], head[b + 1]):
                                    q = order[t]
                                    cand[nc, 0] = pts[q, 0]
                                    cand[nc, 1] = pts[q, 1]
                                    cand[nc, 2] = pts[q, 2]
                                    nc += 1
                for t in range(nc):
                    dx = cand[t, 0] - px
                    dy = cand[t, 1] - py
                    dz = cand[t, 2] - pz
                    if dx * dx + dy * dy + dz * dz <= r2:
                        count += 1
                        break
    return count


@nb.njit(cache=True)
def box_trials(seed, t0, t1, r2, m, lat_lo, lat_hi, vol_lo, vol_hi, vol_r, vol_pitch, target, cells, off, nbricks):
    """Occupation counts and neighborhood-volume counts per trial.

    Columns: one count of eta sites per lattice box (inclusive integer bounds
    ``lat_lo``/``lat_hi``), one sampling-grid count per volume query
    (physical box ``vol_lo``/``vol_hi``, radius ``vol_r``, pitch ``vol_pitch``),
    then the indicator of ``target`` on eta.
    """
    nb_ = lat_lo.shape[0]
    nv = vol_lo.shape[0]
    out = np.zeros((t1 - t0, nb_ + nv + 1), dtype=np.int64)
    buf = np.empty((_CAP, 3), dtype=np.int64)
    for i in range(t1 - t0):
        eta, buf, _ = lerw_kernel(new_stream(seed, t0 + i, 0), r2, buf, cells, off, nbricks)
        k = len(eta)
        for q in range(k):
            x, y, z = eta[q, 0], eta[q, 1], eta[q, 2]
            if x == target[0] and y == target[1] and z == target[2]:
                out[i, nb_ + nv] = 1
            for b in range(nb_):
                if (lat_lo[b, 0] <= x <= lat_hi[b, 0] and lat_lo[b, 1] <= y <= lat_hi[b, 1]
                        and lat_lo[b, 2] <= z <= lat_hi[b, 2]):
                    out[i, b] += 1
        phys = eta.astype(np.float64) / m
        for v in range(nv):
            out[i, nb_ + v] = neighborhood_count(phys, vol_lo[v], vol_hi[v], vol_r[v], vol_pitch[v])
    return out
