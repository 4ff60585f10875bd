"""Pure numpy kernels; same contracts as the compiled ``_ckernels``.

Squared distances are always formed from explicit differences rather than
the ``|a|^2 + |b|^2 - 2ab`` expansion, which loses precision when points
are far from the origin and close to each other.
"""
import numpy as np

# Cap on the size of each (rows, n, d) difference block.
_BLOCK = 1 << 21


def _rows_per_block(n, d):
    return max(1, _BLOCK // max(1, n * d))


def _sqdist_block(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def kde_density_many(points, data, h):
    points = np.ascontiguousarray(points, dtype=np.float64)
    data = np.ascontiguousarray(data, dtype=np.float64)
    m, n = points.shape[0], data.shape[0]
    inv = 1.0 / (2.0 * h * h)
    out = np.empty(m)
    step = _rows_per_block(n, data.shape[1])
    for s in range(0, m, step):
        d2 = _sqdist_block(points[s:s + step], data)
        out[s:s + step] = np.exp(-d2 * inv).sum(axis=1)
    return out


def mean_shift_seeds(seeds, data, h, eps, max_iter):
    y = np.array(seeds, dtype=np.float64, copy=True, order="C")
    data = np.ascontiguousarray(data, dtype=np.float64)
    m, n = y.shape[0], data.shape[0]
    inv = 1.0 / (2.0 * h * h)
    iters = np.zeros(m, dtype=np.int64)
    isolated = np.zeros(m, dtype=bool)
    active = np.arange(m)
    step = _rows_per_block(n, data.shape[1])
    for _ in range(max_iter):
        if active.size == 0:
            break
        still = []
        for s in range(0, active.size, step):
            idx = active[s:s + step]
            cur = y[idx]
            w = np.exp(-_sqdist_block(cur, data) * inv)
            den = w.sum(axis=1)
            lonely = den == 0.0
            isolated[idx[lonely]] = True
            ok = ~lonely
            idx, cur, w, den = idx[ok], cur[ok], w[ok], den[ok]
            new = (w @ data) / den[:, None]
            shift = np.sqrt(np.einsum("ij,ij->i", new - cur, new - cur))
            y[idx] = new
            iters[idx] += 1
            still.append(idx[shift >= eps])
        active = np.concatenate(still) if still else active[:0]
    return y, iters, isolated


def nearest_rows(data, centers):
    data = np.ascontiguousarray(data, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    n = data.shape[0]
    idx = np.empty(n, dtype=np.int64)
    best = np.empty(n)
    step = _rows_per_block(centers.shape[0], data.shape[1])
    for s in range(0, n, step):
        d2 = _sqdist_block(data[s:s + step], centers)
        idx[s:s + step] = np.argmin(d2, axis=1)
        best[s:s + step] = d2[np.arange(d2.shape[0]), idx[s:s + step]]
    return idx, best
