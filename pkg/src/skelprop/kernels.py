"""Hot numeric kernels with two interchangeable backends.

Every kernel exists twice: a numba ``@njit`` version (default) and a
vectorized numpy version. The numpy path is selected by setting the
environment variable ``SKELPROP_NO_NUMBA=1`` before import, or
automatically when numba is not importable. ``benchmarks/bench_kernels.py``
compares the two.

Volumes are passed as float64 arrays of shape (nx, ny, nz); flattened
indices are x-fastest (Fortran order), i = x + nx*(y + ny*z).
"""

from __future__ import annotations

import os

import numpy as np

_BIG = 1.0e30


def _numba_disabled_by_env() -> bool:
    return os.environ.get("SKELPROP_NO_NUMBA", "").strip().lower() in {"1", "true", "yes"}


try:
    if _numba_disabled_by_env():
        raise ImportError("disabled by SKELPROP_NO_NUMBA")
    from numba import njit

    NUMBA_ENABLED = True
except ImportError:
    njit = None
    NUMBA_ENABLED = False


def backend() -> str:
    """Name of the active kernel backend, "numba" or "numpy"."""
    return "numba" if NUMBA_ENABLED else "numpy"


def neighbor_offsets(connectivity: int) -> np.ndarray:
    """Integer (k, 3) neighbor offsets for 6- or 26-connectivity, fixed order."""
    if connectivity not in (6, 26):
        raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")
    offs = []
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dx == 0 and dy == 0 and dz == 0:
                    continue
                if connectivity == 6 and abs(dx) + abs(dy) + abs(dz) != 1:
                    continue
                offs.append((dx, dy, dz))
    return np.asarray(offs, dtype=np.int64)


def offset_lengths_mm(offsets: np.ndarray, spacing) -> np.ndarray:
    sx, sy, sz = spacing
    d = offsets.astype(np.float64)
    return np.sqrt((d[:, 0] * sx) ** 2 + (d[:, 1] * sy) ** 2 + (d[:, 2] * sz) ** 2)


# ---------------------------------------------------------------------------
# separable Gaussian convolution, symmetric (reflecting) boundary
# ---------------------------------------------------------------------------

def _smooth_axis_numpy(vol: np.ndarray, axis: int, weights: np.ndarray) -> np.ndarray:
    r = (weights.shape[0] - 1) // 2
    pad = [(0, 0)] * 3
    pad[axis] = (r, r)
    padded = np.pad(vol, pad, mode="symmetric")
    out = np.zeros_like(vol)
    sl = [slice(None)] * 3
    for k in range(weights.shape[0]):
        sl[axis] = slice(k, k + vol.shape[axis])
        out += weights[k] * padded[tuple(sl)]
    return out


def gaussian_blur_numpy(vol: np.ndarray, weights: np.ndarray) -> np.ndarray:
    out = vol
    for axis in range(3):
        out = _smooth_axis_numpy(out, axis, weights)
    return np.asfortranarray(out)


if NUMBA_ENABLED:

    @njit(cache=True)
    def _mirror(j, n):
        # symmetric half-sample reflection, tiled for radii larger than n
        while j < 0 or j >= n:
            if j < 0:
                j = -j - 1
            else:
                j = 2 * n - 1 - j
        return j

    @njit(cache=True)
    def _smooth_pass_nb(src, dst, nx, ny, nz, axis, weights):
        nk = weights.shape[0]
        r = (nk - 1) // 2
        nxy = nx * ny
        if axis == 0:
            nl, sl, na, sa, nb, sb = nx, 1, ny, nx, nz, nxy
        elif axis == 1:
            nl, sl, na, sa, nb, sb = ny, nx, nx, 1, nz, nxy
        else:
            nl, sl, na, sa, nb, sb = nz, nxy, nx, 1, ny, nx
        line = np.empty(nl, np.float64)
        for b in range(nb):
            for a in range(na):
                base = a * sa + b * sb
                for i in range(nl):
                    line[i] = src[base + i * sl]
                for i in range(nl):
                    acc = 0.0
                    for k in range(nk):
                        acc += weights[k] * line[_mirror(i + k - r, nl)]
                    dst[base + i * sl] = acc

    def gaussian_blur_numba(vol: np.ndarray, weights: np.ndarray) -> np.ndarray:
        nx, ny, nz = vol.shape
        src = np.ravel(vol, order="F").astype(np.float64)
        dst = np.empty_like(src)
        w = np.ascontiguousarray(weights, dtype=np.float64)
        for axis in range(3):
            _smooth_pass_nb(src, dst, nx, ny, nz, axis, w)
            src, dst = dst, src
        return src.reshape((nx, ny, nz), order="F")

    gaussian_blur = gaussian_blur_numba
else:
    gaussian_blur_numba = None
    gaussian_blur = gaussian_blur_numpy


# ---------------------------------------------------------------------------
# geodesic distance: multi-source shortest paths on the voxel graph with
# edge cost |g(a) - g(b)| + spatial_weight * step_mm
# ---------------------------------------------------------------------------

def _shift_slices(offset, shape):
    src = []
    dst = []
    for o, n in zip(offset, shape):
        dst.append(slice(max(0, -o), n - max(0, o)))
        src.append(slice(max(0, o), n - max(0, -o)))
    return tuple(src), tuple(dst)


def geodesic_numpy(vol, seed_linear, spacing, connectivity, spatial_weight):
    """Relaxation sweeps until fixpoint (vectorized Bellman-Ford)."""
    offs = neighbor_offsets(connectivity)
    elen = offset_lengths_mm(offs, spacing)
    g = np.asarray(vol, dtype=np.float64)
    flat = np.full(g.size, np.inf)
    flat[seed_linear] = 0.0
    dist = flat.reshape(g.shape, order="F")  # view of flat
    while True:
        changed = False
        for k in range(offs.shape[0]):
            src, dst = _shift_slices(tuple(offs[k]), g.shape)
            cand = dist[src] + (np.abs(g[dst] - g[src]) + spatial_weight * elen[k])
            view = dist[dst]
            upd = cand < view
            if upd.any():
                view[upd] = cand[upd]
                changed = True
        if not changed:
            break
    return dist


if NUMBA_ENABLED:

    @njit(cache=True)
    def _sift_up(heap, pos, dist, i):
        node = heap[i]
        dn = dist[node]
        while i > 0:
            p = (i - 1) >> 1
            par = heap[p]
            dp = dist[par]
            if dn < dp or (dn == dp and node < par):
                heap[i] = par
                pos[par] = i
                i = p
            else:
                break
        heap[i] = node
        pos[node] = i

    @njit(cache=True)
    def _sift_down(heap, pos, dist, size, i):
        node = heap[i]
        dn = dist[node]
        while True:
            c = 2 * i + 1
            if c >= size:
                break
            if c + 1 < size:
                cl = heap[c]
                cr = heap[c + 1]
                if dist[cr] < dist[cl] or (dist[cr] == dist[cl] and cr < cl):
                    c = c + 1
            ch = heap[c]
            dc = dist[ch]
            if dc < dn or (dc == dn and ch < node):
                heap[i] = ch
                pos[ch] = i
                i = c
            else:
                break
        heap[i] = node
        pos[node] = i

    @njit(cache=True)
    def _dijkstra_nb(g, nx, ny, nz, seeds, dxs, dys, dzs, elen, w):
        n = g.shape[0]
        nxy = nx * ny
        dist = np.full(n, np.inf)
        heap = np.empty(n, np.int64)
        pos = np.full(n, -1, np.int64)  # -1 unseen, -2 settled, else heap slot
        size = 0
        for si in range(seeds.shape[0]):
            s = seeds[si]
            if pos[s] == -1:
                dist[s] = 0.0
                heap[size] = s
                pos[s] = size
                size += 1
                _sift_up(heap, pos, dist, size - 1)
        nk = dxs.shape[0]
        while size > 0:
            u = heap[0]
            size -= 1
            last = heap[size]
            heap[0] = last
            pos[last] = 0
            pos[u] = -2
            if size > 0:
                _sift_down(heap, pos, dist, size, 0)
            du = dist[u]
            gu = g[u]
            x = u % nx
            t = u // nx
            y = t % ny
            z = t // ny
            for e in range(nk):
                xx = x + dxs[e]
                if xx < 0 or xx >= nx:
                    continue
                yy = y + dys[e]
                if yy < 0 or yy >= ny:
                    continue
                zz = z + dzs[e]
                if zz < 0 or zz >= nz:
                    continue
                v = xx + nx * yy + nxy * zz
                if pos[v] == -2:
                    continue
                gd = g[v] - gu
                if gd < 0.0:
                    gd = -gd
                nd = du + (gd + w * elen[e])
                if nd < dist[v]:
                    dist[v] = nd
                    if pos[v] == -1:
                        heap[size] = v
                        pos[v] = size
                        size += 1
                        _sift_up(heap, pos, dist, size - 1)
                    else:
                        _sift_up(heap, pos, dist, pos[v])
        return dist

    def geodesic_numba(vol, seed_linear, spacing, connectivity, spatial_weight):
        nx, ny, nz = vol.shape
        offs = neighbor_offsets(connectivity)
        elen = offset_lengths_mm(offs, spacing)
        flat = np.ravel(vol, order="F").astype(np.float64)
        seeds = np.ascontiguousarray(seed_linear, dtype=np.int64)
        d = _dijkstra_nb(
            flat, nx, ny, nz, seeds,
            np.ascontiguousarray(offs[:, 0]),
            np.ascontiguousarray(offs[:, 1]),
            np.ascontiguousarray(offs[:, 2]),
            elen, float(spatial_weight),
        )
        return d.reshape((nx, ny, nz), order="F")

    geodesic = geodesic_numba
else:
    geodesic_numba = None
    geodesic = geodesic_numpy


# ---------------------------------------------------------------------------
# exact Euclidean distance transform (squared), anisotropic spacing
# ---------------------------------------------------------------------------

def _edt_pass_numpy(d2, axis, positions):
    # exact per-axis lower envelope via direct min-plus reduction
    m = np.moveaxis(d2, axis, -1)
    L = m.shape[-1]
    pd2 = (positions[:, None] - positions[None, :]) ** 2
    out = np.empty_like(m)
    for q in range(L):
        out[..., q] = np.min(m + pd2[q], axis=-1)
    return np.moveaxis(out, -1, axis)


def edt_squared_numpy(seed_mask, spacing):
    d2 = np.where(seed_mask, 0.0, _BIG)
    for axis in range(3):
        positions = np.arange(seed_mask.shape[axis], dtype=np.float64) * spacing[axis]
        d2 = _edt_pass_numpy(d2, axis, positions)
    return np.asfortranarray(d2)


if NUMBA_ENABLED:

    @njit(cache=True)
    def _edt_pass_nb(d2, nx, ny, nz, axis, delta):
        nxy = nx * ny
        if axis == 0:
            nl, sl, na, sa, nb, sb = nx, 1, ny, nx, nz, nxy
        elif axis == 1:
            nl, sl, na, sa, nb, sb = ny, nx, nx, 1, nz, nxy
        else:
            nl, sl, na, sa, nb, sb = nz, nxy, nx, 1, ny, nx
        f = np.empty(nl, np.float64)
        v = np.empty(nl, np.int64)
        z = np.empty(nl + 1, np.float64)
        for b in range(nb):
            for a in range(na):
                base = a * sa + b * sb
                for q in range(nl):
                    f[q] = d2[base + q * sl]
                # lower envelope of parabolas f[i] + (x - i*delta)^2;
                # infinite sentinels keep k in range even when intersections
                # involving _BIG-valued parabolas fall below -_BIG
                k = 0
                v[0] = 0
                z[0] = -np.inf
                z[1] = np.inf
                for q in range(1, nl):
                    qd = q * delta
                    while True:
                        vk = v[k]
                        vd = vk * delta
                        s = ((f[q] + qd * qd) - (f[vk] + vd * vd)) / (2.0 * delta * (q - vk))
                        if s <= z[k]:
                            k -= 1
                        else:
                            break
                    k += 1
                    v[k] = q
                    z[k] = s
                    z[k + 1] = np.inf
                k = 0
                for q in range(nl):
                    qd = q * delta
                    while z[k + 1] < qd:
                        k += 1
                    diff = qd - v[k] * delta
                    d2[base + q * sl] = diff * diff + f[v[k]]

    def edt_squared_numba(seed_mask, spacing):
        nx, ny, nz = seed_mask.shape
        flat = np.where(np.ravel(seed_mask, order="F"), 0.0, _BIG)
        for axis in range(3):
            _edt_pass_nb(flat, nx, ny, nz, axis, float(spacing[axis]))
        return flat.reshape((nx, ny, nz), order="F")

    edt_squared = edt_squared_numba
else:
    edt_squared_numba = None
    edt_squared = edt_squared_numpy
