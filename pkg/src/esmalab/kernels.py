"""Numeric inner loops with a numba path and a numpy path.

Public entry points dispatch on :data:`esmalab._backend.USE_NUMBA`.  The
``*_numba`` and ``*_numpy`` variants are importable directly for
cross-checking and benchmarking.
"""

import numpy as np

from ._backend import USE_NUMBA, njit

# --------------------------------------------------------------------------
# closed-ball neighbour counts
# --------------------------------------------------------------------------


@njit(cache=True)
def ball_counts_numba(points, queries, radius):
    n, d = points.shape
    m = queries.shape[0]
    r2 = radius * radius
    out = np.zeros(m, dtype=np.int64)
    for q in range(m):
        c = 0
        for i in range(n):
            acc = 0.0
            for k in range(d):
                diff = points[i, k] - queries[q, k]
                acc += diff * diff
            if acc <= r2:
                c += 1
        out[q] = c
    return out


def ball_counts_numpy(points, queries, radius, chunk=1024):
    points = np.asarray(points, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    r2 = radius * radius
    out = np.empty(len(queries), dtype=np.int64)
    for start in range(0, len(queries), chunk):
        q = queries[start:start + chunk]
        diff = q[:, None, :] - points[None, :, :]
        # same accumulation order as the loop kernel: sum over coordinates
        d2 = np.zeros(diff.shape[:2])
        for k in range(diff.shape[2]):
            d2 += diff[:, :, k] * diff[:, :, k]
        out[start:start + chunk] = np.count_nonzero(d2 <= r2, axis=1)
    return out


def ball_counts(points, queries, radius):
    """Number of ``points`` inside the closed ball of ``radius`` around each query."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    if points.shape[0] == 0:
        return np.zeros(len(queries), dtype=np.int64)
    if USE_NUMBA:
        return ball_counts_numba(points, queries, float(radius))
    return ball_counts_numpy(points, queries, float(radius))


# --------------------------------------------------------------------------
# 3x3 convolution with replicate padding, and its adjoint
# --------------------------------------------------------------------------


@njit(cache=True)
def conv3x3_numba(grids, kernel):
    n, c, h, w = grids.shape
    out = np.zeros_like(grids)
    for s in range(n):
        for ch in range(c):
            for i in range(h):
                for j in range(w):
                    acc = 0.0
                    for a in range(3):
                        ii = min(max(i + a - 1, 0), h - 1)
                        for b in range(3):
                            jj = min(max(j + b - 1, 0), w - 1)
                            acc += kernel[a, b] * grids[s, ch, ii, jj]
                    out[s, ch, i, j] = acc
    return out


@njit(cache=True)
def conv3x3_adjoint_numba(grad_out, kernel):
    n, c, h, w = grad_out.shape
    out = np.zeros_like(grad_out)
    for s in range(n):
        for ch in range(c):
            for i in range(h):
                for j in range(w):
                    g = grad_out[s, ch, i, j]
                    for a in range(3):
                        ii = min(max(i + a - 1, 0), h - 1)
                        for b in range(3):
                            jj = min(max(j + b - 1, 0), w - 1)
                            out[s, ch, ii, jj] += kernel[a, b] * g
    return out


def _padded_index(h, w):
    rows = np.clip(np.arange(h)[:, None] + np.arange(3)[None, :] - 1, 0, h - 1)
    cols = np.clip(np.arange(w)[:, None] + np.arange(3)[None, :] - 1, 0, w - 1)
    return rows, cols


def conv3x3_numpy(grids, kernel):
    grids = np.asarray(grids, dtype=np.float64)
    _, _, h, w = grids.shape
    rows, cols = _padded_index(h, w)
    out = np.zeros_like(grids)
    for a in range(3):
        for b in range(3):
            out += kernel[a, b] * grids[:, :, rows[:, a]][:, :, :, cols[:, b]]
    return out


def conv3x3_adjoint_numpy(grad_out, kernel):
    grad_out = np.asarray(grad_out, dtype=np.float64)
    n, c, h, w = grad_out.shape
    rows, cols = _padded_index(h, w)
    out = np.zeros_like(grad_out)
    flat = out.reshape(n * c, h * w)
    g = grad_out.reshape(n * c, h * w)
    for a in range(3):
        for b in range(3):
            target = (rows[:, a][:, None] * w + cols[:, b][None, :]).ravel()
            contrib = kernel[a, b] * g
            # scatter-add columns; repeated targets at the border accumulate
            np.add.at(flat, (slice(None), target), contrib)
    return out


def conv3x3(grids, kernel):
    """Replicate-padded 3x3 correlation over ``(n, channels, h, w)`` grids."""
    grids = np.ascontiguousarray(grids, dtype=np.float64)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    if USE_NUMBA:
        return conv3x3_numba(grids, kernel)
    return conv3x3_numpy(grids, kernel)


def conv3x3_adjoint(grad_out, kernel):
    """Transpose of :func:`conv3x3`; maps output gradients to input gradients."""
    grad_out = np.ascontiguousarray(grad_out, dtype=np.float64)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    if USE_NUMBA:
        return conv3x3_adjoint_numba(grad_out, kernel)
    return conv3x3_adjoint_numpy(grad_out, kernel)
