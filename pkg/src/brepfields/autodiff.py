"""Reverse-mode automatic differentiation over dense float64 tensors.

Define-by-run: every operation appends a node to a :class:`Tape`, so the
tape is rebuilt for each forward pass. This keeps variable-size topology
graphs trivial to handle at the cost of a little per-op overhead, which is
negligible next to the BLAS calls doing the actual work.

Conventions:
  * everything is float64, C-contiguous;
  * no broadcasting except scalar-with-tensor (Python numbers or 0-d
    tensors); row-vector bias addition has its own explicit op;
  * ``backward`` requires a scalar (size-1) output and leaves exact zeros
    on leaves that do not influence it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteGradientError(ArithmeticError):
    """An optimizer step received a NaN/inf gradient."""


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr if arr.ndim == 0 else np.ascontiguousarray(arr)


class Tape:
    """Topologically ordered record of one forward computation."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def _register(self, t: "Tensor") -> "Tensor":
        t.idx = len(self.nodes)
        self.nodes.append(t)
        return t

    def tensor(self, data, name: str | None = None) -> "Tensor":
        """Create a leaf tensor on this tape."""
        return self._register(Tensor(self, _as_array(data), op="leaf", name=name))

    def leaves(self) -> list["Tensor"]:
        return [t for t in self.nodes if t.op == "leaf"]


class Tensor:
    """One node of a tape: cached forward value plus a backward rule."""

    __slots__ = ("tape", "idx", "op", "parents", "value", "grad", "name", "_bwd")

    def __init__(self, tape, value, op, parents=(), bwd=None, name=None):
        self.tape = tape
        self.idx = -1
        self.op = op
        self.parents = parents
        self.value = value
        self.grad = None
        self.name = name
        self._bwd = bwd

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.value.shape})"

    # -- helpers -----------------------------------------------------------

    def _new(self, value, op, parents, bwd):
        t = Tensor(self.tape, value, op, parents, bwd)
        return self.tape._register(t)

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    @staticmethod
    def _binary_operands(a: "Tensor", b):
        """Classify the second operand: same-shape tensor, scalar tensor,
        or plain number. Anything else is a shape error."""
        if isinstance(b, Tensor):
            if b.value.shape == a.value.shape:
                return "tensor", b
            if b.value.size == 1:
                return "scalar_tensor", b
            if a.value.size == 1:
                return "tensor_scalar", b
            raise ShapeError(
                f"operand shapes {a.value.shape} and {b.value.shape} differ "
                "(only scalar-with-tensor broadcast is supported)")
        if isinstance(b, (int, float, np.floating, np.integer)):
            return "number", float(b)
        raise TypeError(f"unsupported operand type {type(b)!r}")

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        kind, other = self._binary_operands(self, other)
        if kind == "number":
            out_val = self.value + other
            a = self

            def bwd(g, a=a):
                a._accum(g)
            return self._new(out_val, "add", (a,), bwd)
        a, b = self, other
        out_val = a.value + b.value

        def bwd(g, a=a, b=b):
            a._accum(g if g.shape == a.value.shape else g.sum())
            b._accum(g if g.shape == b.value.shape else g.sum())
        return self._new(out_val, "add", (a, b), bwd)

    __radd__ = __add__

    def __sub__(self, other):
        kind, other = self._binary_operands(self, other)
        if kind == "number":
            out_val = self.value - other
            a = self

            def bwd(g, a=a):
                a._accum(g)
            return self._new(out_val, "sub", (a,), bwd)
        a, b = self, other
        out_val = a.value - b.value

        def bwd(g, a=a, b=b):
            a._accum(g if g.shape == a.value.shape else g.sum())
            b._accum(-g if g.shape == b.value.shape else -g.sum())
        return self._new(out_val, "sub", (a, b), bwd)

    def __rsub__(self, other):
        return (self * -1.0) + other

    def __neg__(self):
        return self * -1.0

    def __mul__(self, other):
        kind, other = self._binary_operands(self, other)
        if kind == "number":
            out_val = self.value * other
            a, c = self, other

            def bwd(g, a=a, c=c):
                a._accum(g * c)
            return self._new(out_val, "mul", (a,), bwd)
        a, b = self, other
        out_val = a.value * b.value

        def bwd(g, a=a, b=b):
            ga = g * b.value
            gb = g * a.value
            a._accum(ga if ga.shape == a.value.shape else ga.sum())
            b._accum(gb if gb.shape == b.value.shape else gb.sum())
        return self._new(out_val, "mul", (a, b), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        kind, other = self._binary_operands(self, other)
        if kind == "number":
            return self * (1.0 / other)
        a, b = self, other
        out_val = a.value / b.value

        def bwd(g, a=a, b=b, out_val=out_val):
            ga = g / b.value
            gb = -g * out_val / b.value
            a._accum(ga if ga.shape == a.value.shape else ga.sum())
            b._accum(gb if gb.shape == b.value.shape else gb.sum())
        return self._new(out_val, "div", (a, b), bwd)

    def __matmul__(self, other):
        if not isinstance(other, Tensor):
            raise TypeError("matmul expects a Tensor operand")
        a, b = self, other
        if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
            raise ShapeError(
                f"matmul shapes {a.value.shape} and {b.value.shape} do not chain")
        out_val = a.value @ b.value

        def bwd(g, a=a, b=b):
            a._accum(g @ b.value.T)
            b._accum(a.value.T @ g)
        return self._new(out_val, "matmul", (a, b), bwd)

    # -- elementwise -------------------------------------------------------

    def relu(self):
        out_val = np.maximum(self.value, 0.0)
        a = self

        def bwd(g, a=a):
            a._accum(g * (a.value > 0.0))
        return self._new(out_val, "relu", (a,), bwd)

    def square(self):
        out_val = self.value * self.value
        a = self

        def bwd(g, a=a):
            a._accum(2.0 * a.value * g)
        return self._new(out_val, "square", (a,), bwd)

    def sqrt(self):
        out_val = np.sqrt(self.value)
        a = self

        def bwd(g, a=a, out_val=out_val):
            a._accum(g * 0.5 / out_val)
        return self._new(out_val, "sqrt", (a,), bwd)

    def sin(self):
        out_val = np.sin(self.value)
        a = self

        def bwd(g, a=a):
            a._accum(g * np.cos(a.value))
        return self._new(out_val, "sin", (a,), bwd)

    def cos(self):
        out_val = np.cos(self.value)
        a = self

        def bwd(g, a=a):
            a._accum(-g * np.sin(a.value))
        return self._new(out_val, "cos", (a,), bwd)

    def log(self):
        out_val = np.log(self.value)
        a = self

        def bwd(g, a=a):
            a._accum(g / a.value)
        return self._new(out_val, "log", (a,), bwd)

    def tanh(self):
        out_val = np.tanh(self.value)
        a = self

        def bwd(g, a=a, out_val=out_val):
            a._accum(g * (1.0 - out_val * out_val))
        return self._new(out_val, "tanh", (a,), bwd)

    def sigmoid(self):
        out_val = 1.0 / (1.0 + np.exp(-self.value))
        a = self

        def bwd(g, a=a, out_val=out_val):
            a._accum(g * out_val * (1.0 - out_val))
        return self._new(out_val, "sigmoid", (a,), bwd)

    # -- shape / indexing ---------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_val = self.value.reshape(shape)
        a = self

        def bwd(g, a=a):
            a._accum(g.reshape(a.value.shape))
        return self._new(out_val, "reshape", (a,), bwd)

    def __getitem__(self, key):
        out_val = np.asarray(self.value[key], dtype=np.float64)
        if out_val.ndim > 0:
            out_val = np.ascontiguousarray(out_val)
        a = self

        def bwd(g, a=a, key=key):
            if a.grad is None:
                a.grad = np.zeros_like(a.value)
            a.grad[key] += g
        return self._new(out_val, "slice", (a,), bwd)

    # -- reductions ---------------------------------------------------------

    def sum(self):
        out_val = np.asarray(self.value.sum())
        a = self

        def bwd(g, a=a):
            a._accum(np.broadcast_to(g, a.value.shape))
        return self._new(out_val, "sum", (a,), bwd)

    def mean(self):
        n = self.value.size
        out_val = np.asarray(self.value.mean())
        a = self

        def bwd(g, a=a, n=n):
            a._accum(np.broadcast_to(g / n, a.value.shape))
        return self._new(out_val, "mean", (a,), bwd)


# -- module-level ops --------------------------------------------------------

def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of an empty list")
    vals = [t.value for t in tensors]
    ref = list(vals[0].shape)
    for v in vals[1:]:
        s = list(v.shape)
        s[axis] = ref[axis]
        if s != ref:
            raise ShapeError(f"concat shapes {[v.shape for v in vals]} disagree "
                             f"off axis {axis}")
    out_val = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)

    def bwd(g, tensors=tensors, offsets=offsets, axis=axis):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accum(g[tuple(idx)])
    t0 = tensors[0]
    return t0._new(out_val, "concat", tuple(tensors), bwd)


def softmax_last(t: Tensor) -> Tensor:
    x = t.value
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_val = e / e.sum(axis=-1, keepdims=True)

    def bwd(g, t=t, out_val=out_val):
        dot = (g * out_val).sum(axis=-1, keepdims=True)
        t._accum(out_val * (g - dot))
    return t._new(out_val, "softmax", (t,), bwd)


def log_softmax_last(t: Tensor) -> Tensor:
    x = t.value
    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out_val = shifted - lse

    def bwd(g, t=t, out_val=out_val):
        t._accum(g - np.exp(out_val) * g.sum(axis=-1, keepdims=True))
    return t._new(out_val, "log_softmax", (t,), bwd)


def add_rowvec(x: Tensor, b: Tensor) -> Tensor:
    """x[i, j] + b[j] for a 2-d x and 1-d b (explicit bias add)."""
    if x.value.ndim != 2 or b.value.shape != (x.value.shape[1],):
        raise ShapeError(f"add_rowvec shapes {x.value.shape} and {b.value.shape}")
    out_val = x.value + b.value[None, :]

    def bwd(g, x=x, b=b):
        x._accum(g)
        b._accum(g.sum(axis=0))
    return x._new(out_val, "add_rowvec", (x, b), bwd)


def rows_dot(x: Tensor, w: Tensor) -> Tensor:
    """Per-row dot product: (n, m) x (m,) -> (n, 1).

    Reduces each row independently (unlike a BLAS matvec, whose per-row
    bits can depend on row position), which keeps encodings bit-stable
    under entity re-labelling.
    """
    if x.value.ndim != 2 or w.value.shape != (x.value.shape[1],):
        raise ShapeError(f"rows_dot shapes {x.value.shape} and {w.value.shape}")
    out_val = (x.value * w.value[None, :]).sum(axis=1, keepdims=True)

    def bwd(g, x=x, w=w):
        x._accum(g * w.value[None, :])
        w._accum((g * x.value).sum(axis=0))
    return x._new(out_val, "rows_dot", (x, w), bwd)


def mul_colvec(x: Tensor, c: Tensor) -> Tensor:
    """x[i, j] * c[i, 0] for a 2-d x and (n, 1) c (explicit row scaling)."""
    if x.value.ndim != 2 or c.value.shape != (x.value.shape[0], 1):
        raise ShapeError(f"mul_colvec shapes {x.value.shape} and {c.value.shape}")
    out_val = x.value * c.value

    def bwd(g, x=x, c=c):
        x._accum(g * c.value)
        c._accum((g * x.value).sum(axis=1, keepdims=True))
    return x._new(out_val, "mul_colvec", (x, c), bwd)


def repeat_rows(x: Tensor, counts) -> Tensor:
    """Repeat row i of a 2-d tensor counts[i] times (segment expansion)."""
    counts = np.asarray(counts, dtype=np.int64)
    if x.value.ndim != 2 or counts.shape != (x.value.shape[0],):
        raise ShapeError(f"repeat_rows shapes {x.value.shape} / counts {counts.shape}")
    if (counts < 0).any():
        raise ShapeError("repeat_rows counts must be nonnegative")
    out_val = np.repeat(x.value, counts, axis=0)
    seg = np.repeat(np.arange(len(counts)), counts)

    def bwd(g, x=x, seg=seg):
        if x.grad is None:
            x.grad = np.zeros_like(x.value)
        np.add.at(x.grad, seg, g)
    return x._new(out_val, "repeat_rows", (x,), bwd)


def gather_rows(x: Tensor, idx) -> Tensor:
    """Select rows of a 2-d tensor by integer index (rows may repeat)."""
    idx = np.asarray(idx, dtype=np.int64)
    if x.value.ndim != 2 or idx.ndim != 1:
        raise ShapeError(f"gather_rows on shape {x.value.shape}, idx {idx.shape}")
    out_val = x.value[idx]

    def bwd(g, x=x, idx=idx):
        if x.grad is None:
            x.grad = np.zeros_like(x.value)
        np.add.at(x.grad, idx, g)
    return x._new(out_val, "gather_rows", (x,), bwd)


def max_rows(x: Tensor) -> Tensor:
    """Column-wise max of a 2-d tensor. Ties route gradient to the first
    maximal row, which keeps backward deterministic."""
    if x.value.ndim != 2 or x.value.shape[0] == 0:
        raise ShapeError(f"max_rows on shape {x.value.shape}")
    am = np.argmax(x.value, axis=0)
    out_val = x.value[am, np.arange(x.value.shape[1])]

    def bwd(g, x=x, am=am):
        if x.grad is None:
            x.grad = np.zeros_like(x.value)
        x.grad[am, np.arange(x.value.shape[1])] += g
    return x._new(out_val, "max_rows", (x,), bwd)


def mean_rows(x: Tensor) -> Tensor:
    """Column-wise mean of a 2-d tensor."""
    if x.value.ndim != 2 or x.value.shape[0] == 0:
        raise ShapeError(f"mean_rows on shape {x.value.shape}")
    n = x.value.shape[0]
    out_val = x.value.mean(axis=0)

    def bwd(g, x=x, n=n):
        x._accum(np.broadcast_to(g / n, x.value.shape))
    return x._new(out_val, "mean_rows", (x,), bwd)


def backward(out: Tensor) -> None:
    """Accumulate d(out)/d(node) into ``.grad`` of every node at or before
    ``out`` on its tape. ``out`` must be a scalar (size 1)."""
    if out.value.size != 1:
        raise ShapeError(f"backward needs a scalar output, got shape {out.value.shape}")
    tape = out.tape
    for node in tape.nodes:
        node.grad = None
    out.grad = np.ones_like(out.value)
    for node in reversed(tape.nodes[: out.idx + 1]):
        if node.grad is None or node._bwd is None:
            continue
        node._bwd(node.grad)
    # off-path leaves get exact zeros
    for node in tape.nodes:
        if node.grad is None:
            node.grad = np.zeros_like(node.value)


def grad_by_name(tape: Tape) -> dict[str, np.ndarray]:
    """Collect gradients of named leaves after a backward pass."""
    out = {}
    for node in tape.nodes:
        if node.op == "leaf" and node.name is not None:
            out[node.name] = node.grad if node.grad is not None \
                else np.zeros_like(node.value)
    return out


def lift(tape: Tape, params: dict[str, np.ndarray]) -> dict[str, Tensor]:
    """Create one named leaf per parameter array, in sorted name order."""
    return {k: tape.tensor(params[k], name=k) for k in sorted(params)}


# -- Adam ---------------------------------------------------------------------

@dataclass
class AdamState:
    """Bias-corrected Adam accumulator state over named parameters."""

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> None:
    """One in-place Adam update over every named parameter."""
    for name in sorted(params):
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(params[name])
        if g.shape != params[name].shape:
            raise ShapeError(
                f"gradient shape {g.shape} != parameter shape "
                f"{params[name].shape} for {name!r}")
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(f"non-finite gradient for {name!r}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name in sorted(params):
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(params[name])
        m = state.m.setdefault(name, np.zeros_like(params[name]))
        v = state.v.setdefault(name, np.zeros_like(params[name]))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
