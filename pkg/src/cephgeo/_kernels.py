"""Hot numeric kernels with two interchangeable backends.

Every kernel exists twice: a numba ``@njit`` build and a pure-numpy build.
The active backend is chosen once at import time:

* ``CEPHGEO_PURE_NUMPY=1`` in the environment forces the numpy path;
* otherwise numba is used when importable, numpy when not.

``KERNEL_BACKEND`` records the choice ("numba" or "numpy") so reports and
benchmarks can state which path produced a result. Within one backend all
kernels are deterministic; across backends results agree to the last few
ulps (selection kernels, which involve no transcendentals, agree exactly).

``benchmarks/bench_kernels.py`` times both paths side by side.
"""

from __future__ import annotations

import math
import os

import numpy as np

_FORCE_NUMPY = os.environ.get("CEPHGEO_PURE_NUMPY", "").lower() in ("1", "true", "yes")


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------

def _segment_distances_np(xs, ys, i, j):
    """Distances of interior vertices i+1..j-1 to segment (i, j)."""
    px = xs[i + 1:j]
    py = ys[i + 1:j]
    dx = xs[j] - xs[i]
    dy = ys[j] - ys[i]
    seg2 = dx * dx + dy * dy
    if seg2 == 0.0:
        return np.sqrt((px - xs[i]) ** 2 + (py - ys[i]) ** 2)
    t = ((px - xs[i]) * dx + (py - ys[i]) * dy) / seg2
    t = np.clip(t, 0.0, 1.0)
    qx = xs[i] + t * dx
    qy = ys[i] + t * dy
    return np.sqrt((px - qx) ** 2 + (py - qy) ** 2)


def _dp_keep_mask_np(xs, ys, eps):
    n = xs.shape[0]
    keep = np.zeros(n, dtype=np.bool_)
    keep[0] = True
    keep[n - 1] = True
    stack = [(0, n - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        d = _segment_distances_np(xs, ys, i, j)
        k = int(np.argmax(d))
        if d[k] > eps:
            split = i + 1 + k
            keep[split] = True
            stack.append((i, split))
            stack.append((split, j))
    return keep


def _gaussian_fill_np(out, cx, cy, sigma):
    h, w = out.shape
    inv = 1.0 / (2.0 * sigma * sigma)
    col = (np.arange(w, dtype=np.float64) - cx) ** 2
    row = (np.arange(h, dtype=np.float64) - cy) ** 2
    np.exp(-(col[None, :] + row[:, None]) * inv, out=out)
    return out


def _resample_means_np(values, indices):
    return values[indices].sum(axis=1) / indices.shape[1]


def _signflip_mean_abs_np(diffs, signs):
    return np.abs(signs @ diffs) / diffs.shape[0]


def _weighted_spread_np(win, cx, cy, floor):
    h, w = win.shape
    mask = win >= floor
    wv = np.where(mask, win, 0.0)
    xs = np.arange(w, dtype=np.float64) - cx
    ys = np.arange(h, dtype=np.float64) - cy
    r2 = xs[None, :] ** 2 + ys[:, None] ** 2
    wsum = float(wv.sum())
    wr2 = float((wv * r2).sum())
    return wsum, wr2


# ---------------------------------------------------------------------------
# numba implementations (same arithmetic, explicit loops)
# ---------------------------------------------------------------------------

def _build_numba_kernels():
    from numba import njit

    @njit(cache=True)
    def _point_segment_dist(px, py, ax, ay, bx, by):
        dx = bx - ax
        dy = by - ay
        seg2 = dx * dx + dy * dy
        if seg2 == 0.0:
            ex = px - ax
            ey = py - ay
            return math.sqrt(ex * ex + ey * ey)
        t = ((px - ax) * dx + (py - ay) * dy) / seg2
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        qx = ax + t * dx
        qy = ay + t * dy
        ex = px - qx
        ey = py - qy
        return math.sqrt(ex * ex + ey * ey)

    @njit(cache=True)
    def dp_keep_mask(xs, ys, eps):
        n = xs.shape[0]
        keep = np.zeros(n, dtype=np.bool_)
        keep[0] = True
        keep[n - 1] = True
        stack = np.empty((2 * n + 4, 2), dtype=np.int64)
        top = 0
        stack[top, 0] = 0
        stack[top, 1] = n - 1
        top += 1
        while top > 0:
            top -= 1
            i = stack[top, 0]
            j = stack[top, 1]
            if j <= i + 1:
                continue
            best = -1.0
            split = -1
            for k in range(i + 1, j):
                d = _point_segment_dist(xs[k], ys[k], xs[i], ys[i], xs[j], ys[j])
                if d > best:
                    best = d
                    split = k
            if best > eps:
                keep[split] = True
                stack[top, 0] = i
                stack[top, 1] = split
                top += 1
                stack[top, 0] = split
                stack[top, 1] = j
                top += 1
        return keep

    @njit(cache=True)
    def gaussian_fill(out, cx, cy, sigma):
        h, w = out.shape
        inv = 1.0 / (2.0 * sigma * sigma)
        for y in range(h):
            ry = (y - cy) ** 2
            for x in range(w):
                rx = (x - cx) ** 2
                out[y, x] = math.exp(-(rx + ry) * inv)
        return out

    @njit(cache=True)
    def resample_means(values, indices):
        b, n = indices.shape
        out = np.empty(b, dtype=np.float64)
        for r in range(b):
            acc = 0.0
            for c in range(n):
                acc += values[indices[r, c]]
            out[r] = acc / n
        return out

    @njit(cache=True)
    def signflip_mean_abs(diffs, signs):
        b, n = signs.shape
        out = np.empty(b, dtype=np.float64)
        for r in range(b):
            acc = 0.0
            for c in range(n):
                acc += signs[r, c] * diffs[c]
            out[r] = abs(acc) / n
        return out

    @njit(cache=True)
    def weighted_spread(win, cx, cy, floor):
        h, w = win.shape
        wsum = 0.0
        wr2 = 0.0
        for y in range(h):
            ry = (y - cy) ** 2
            for x in range(w):
                v = win[y, x]
                if v >= floor:
                    wsum += v
                    wr2 += v * ((x - cx) ** 2 + ry)
        return wsum, wr2

    return {
        "dp_keep_mask": dp_keep_mask,
        "gaussian_fill": gaussian_fill,
        "resample_means": resample_means,
        "signflip_mean_abs": signflip_mean_abs,
        "weighted_spread": weighted_spread,
    }


_NUMPY_KERNELS = {
    "dp_keep_mask": _dp_keep_mask_np,
    "gaussian_fill": _gaussian_fill_np,
    "resample_means": _resample_means_np,
    "signflip_mean_abs": _signflip_mean_abs_np,
    "weighted_spread": _weighted_spread_np,
}


def _select_backend():
    if _FORCE_NUMPY:
        return "numpy", _NUMPY_KERNELS
    try:
        return "numba", _build_numba_kernels()
    except ImportError:
        return "numpy", _NUMPY_KERNELS


KERNEL_BACKEND, _ACTIVE = _select_backend()

dp_keep_mask = _ACTIVE["dp_keep_mask"]
gaussian_fill = _ACTIVE["gaussian_fill"]
resample_means = _ACTIVE["resample_means"]
signflip_mean_abs = _ACTIVE["signflip_mean_abs"]
weighted_spread = _ACTIVE["weighted_spread"]

# exported for tests/benchmarks that want to compare paths explicitly
NUMPY_KERNELS = _NUMPY_KERNELS


def numba_kernels_or_none():
    """The numba kernel set, or None when numba is unavailable."""
    try:
        return _build_numba_kernels()
    except ImportError:
        return None


def warmup():
    """Trigger JIT compilation of every kernel on tiny inputs."""
    xs = np.array([0.0, 1.0, 2.0])
    ys = np.array([0.0, 1.0, 0.0])
    dp_keep_mask(xs, ys, 0.5)
    gaussian_fill(np.empty((4, 4)), 1.5, 1.5, 1.0)
    resample_means(np.array([1.0, 2.0]), np.zeros((2, 2), dtype=np.int64))
    signflip_mean_abs(np.array([1.0, -1.0]), np.ones((2, 2)))
    weighted_spread(np.ones((3, 3)), 1.0, 1.0, 0.05)
