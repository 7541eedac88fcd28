"""Central finite-difference gradient checking.

Used by the test suite to validate every autodiff op and the composed
networks. The convention for "relative error" is
``|g_fd - g_ad| / max(1, |g_fd|, |g_ad|)`` taken elementwise and maximized.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tape, backward


def finite_difference(fn, arrays: dict[str, np.ndarray], h: float = 1e-5
                      ) -> dict[str, np.ndarray]:
    """Central-difference gradient of ``fn(arrays) -> float`` w.r.t. every
    entry of every array."""
    grads = {}
    for name, base in arrays.items():
        g = np.zeros_like(base)
        flat = base.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(arrays)
            flat[i] = orig - h
            fm = fn(arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads[name] = g
    return grads


def autodiff_gradient(build, arrays: dict[str, np.ndarray]
                      ) -> tuple[float, dict[str, np.ndarray]]:
    """Run ``build(tape, leaves) -> scalar Tensor`` and return its value and
    the gradients w.r.t. the named leaves."""
    tape = Tape()
    leaves = {k: tape.tensor(arrays[k], name=k) for k in sorted(arrays)}
    out = build(tape, leaves)
    backward(out)
    return float(out.value), {k: leaves[k].grad.copy() for k in arrays}


def max_rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def check_gradients(build, arrays: dict[str, np.ndarray], h: float = 1e-5
                    ) -> float:
    """Compare autodiff and central-difference gradients of a scalar-valued
    tape program; returns the worst relative error over all inputs."""
    def fn(arrs):
        tape = Tape()
        leaves = {k: tape.tensor(arrs[k], name=k) for k in sorted(arrs)}
        return float(build(tape, leaves).value)

    _, ad = autodiff_gradient(build, arrays)
    fd = finite_difference(fn, arrays, h=h)
    return max(max_rel_error(ad[k], fd[k]) for k in arrays)
