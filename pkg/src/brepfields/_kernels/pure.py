"""Pure-numpy kernel fallback. Mirrors _fast.pyx formula-for-formula."""

from __future__ import annotations

import numpy as np

# points are processed in chunks so the (chunk x segments) temporaries stay
# cache-friendly even for the 512x512 oracle grids
_CHUNK = 4096


def _segments(verts: np.ndarray, starts: np.ndarray):
    a_idx = []
    for li in range(len(starts) - 1):
        lo, hi = starts[li], starts[li + 1]
        a_idx.extend(range(lo, hi - 1))
    a_idx = np.asarray(a_idx, dtype=np.int64)
    return verts[a_idx], verts[a_idx + 1]


def polygon_parity(points, verts, starts):
    out = np.zeros(len(points), dtype=np.uint8)
    if len(verts) == 0 or len(points) == 0:
        return out
    a, b = _segments(verts, starts)
    x1, y1 = a[:, 0], a[:, 1]
    x2, y2 = b[:, 0], b[:, 1]
    for lo in range(0, len(points), _CHUNK):
        px = points[lo:lo + _CHUNK, 0][:, None]
        py = points[lo:lo + _CHUNK, 1][:, None]
        spans = ((y1 <= py) & (py < y2)) | ((y2 <= py) & (py < y1))
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
        crossings = (spans & (xc > px)).sum(axis=1)
        out[lo:lo + _CHUNK] = (crossings & 1).astype(np.uint8)
    return out


def polyline_distance(points, verts, starts):
    n = len(points)
    out = np.full(n, np.inf, dtype=np.float64)
    if len(verts) == 0 or n == 0:
        return out
    a, b = _segments(verts, starts)
    d = b - a
    seg_len2 = d[:, 0] ** 2 + d[:, 1] ** 2
    safe_len2 = np.where(seg_len2 > 0.0, seg_len2, 1.0)
    for lo in range(0, n, _CHUNK):
        p = points[lo:lo + _CHUNK]
        rx = p[:, 0][:, None] - a[:, 0]
        ry = p[:, 1][:, None] - a[:, 1]
        t = (rx * d[:, 0] + ry * d[:, 1]) / safe_len2
        t = np.clip(np.where(seg_len2 > 0.0, t, 0.0), 0.0, 1.0)
        fx = rx - t * d[:, 0]
        fy = ry - t * d[:, 1]
        dist2 = fx * fx + fy * fy
        out[lo:lo + _CHUNK] = np.sqrt(dist2.min(axis=1))
    return out
