"""Geometry hot kernels: even-odd polygon parity and polyline distance.

A compiled Cython implementation is preferred; a vectorized numpy fallback
is selected at import time when the extension is unavailable or when
``BREPFIELDS_PURE_KERNELS`` is set. Both implement the same formulas in the
same evaluation order; ``benchmarks/bench_kernels.py`` compares them.
"""

from __future__ import annotations

import os

import numpy as np

from . import pure

if os.environ.get("BREPFIELDS_PURE_KERNELS"):
    _impl = pure
    BACKEND = "pure"
else:
    try:
        from . import _fast as _impl  # type: ignore[attr-defined]
        BACKEND = "compiled"
    except ImportError:
        _impl = pure
        BACKEND = "pure"


def pack_loops(loops) -> tuple[np.ndarray, np.ndarray]:
    """Flatten a list of (k_i, 2) polyline arrays into one vertex array plus
    loop start offsets, the layout both kernel backends consume."""
    if not loops:
        return (np.zeros((0, 2), dtype=np.float64),
                np.zeros(1, dtype=np.int64))
    verts = np.ascontiguousarray(np.concatenate(loops, axis=0), dtype=np.float64)
    starts = np.zeros(len(loops) + 1, dtype=np.int64)
    np.cumsum([len(l) for l in loops], out=starts[1:])
    return verts, starts


def polygon_parity(points: np.ndarray, verts: np.ndarray,
                   starts: np.ndarray) -> np.ndarray:
    """Even-odd crossing parity of a +x ray from each point against all
    closed polylines. Returns uint8 (1 = odd = enclosed)."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    return _impl.polygon_parity(points, verts, starts)


def polyline_distance(points: np.ndarray, verts: np.ndarray,
                      starts: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to the nearest polyline segment."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    return _impl.polyline_distance(points, verts, starts)
