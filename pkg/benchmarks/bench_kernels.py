"""Compare the compiled geometry kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--points N] [--segments M]

Workloads mirror production use: clip-mask classification of SDF probe
batches (5000 points x a few hundred boundary segments per face) and the
brute-force oracle grid (512^2 points).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from brepfields._kernels import BACKEND, pack_loops, pure

try:
    from brepfields._kernels import _fast
except ImportError:
    _fast = None


def make_workload(n_points: int, n_segments: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 2 * np.pi, n_segments + 1)
    wobble = 1.0 + 0.2 * np.sin(5 * t)
    loop = np.stack([wobble * np.cos(t) * 0.5 + 0.5,
                     wobble * np.sin(t) * 0.5 + 0.5], axis=-1)
    verts, starts = pack_loops([loop])
    pts = rng.uniform(-0.1, 1.1, size=(n_points, 2))
    return pts, verts, starts


def timeit(fn, *args, repeats: int = 5) -> float:
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--points", type=int, default=5000)
    ap.add_argument("--oracle-points", type=int, default=512 * 512)
    ap.add_argument("--segments", type=int, default=400)
    args = ap.parse_args()

    print(f"active backend: {BACKEND}")
    if _fast is None:
        print("compiled extension unavailable; benchmarking pure only")

    rows = []
    for label, n in (("classify", args.points), ("oracle", args.oracle_points)):
        pts, verts, starts = make_workload(n, args.segments)
        t_pure_par = timeit(pure.polygon_parity, pts, verts, starts)
        t_pure_dst = timeit(pure.polyline_distance, pts, verts, starts)
        if _fast is not None:
            t_fast_par = timeit(_fast.polygon_parity, pts, verts, starts)
            t_fast_dst = timeit(_fast.polyline_distance, pts, verts, starts)
            assert np.array_equal(_fast.polygon_parity(pts, verts, starts),
                                  pure.polygon_parity(pts, verts, starts))
        else:
            t_fast_par = t_fast_dst = float("nan")
        rows.append((f"{label} parity   ({n} pts)", t_pure_par, t_fast_par))
        rows.append((f"{label} distance ({n} pts)", t_pure_dst, t_fast_dst))

    print(f"{'workload':34s} {'pure':>10s} {'compiled':>10s} {'speedup':>8s}")
    for name, tp, tf in rows:
        speed = tp / tf if tf == tf else float("nan")
        print(f"{name:34s} {tp * 1e3:9.2f}ms {tf * 1e3:9.2f}ms {speed:7.1f}x")


if __name__ == "__main__":
    main()
