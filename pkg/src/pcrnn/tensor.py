"""A small dense-tensor kernel with reverse-mode differentiation.

Operations are plain functions over :class:`Tensor`.  While a :class:`Graph`
is active (``with Graph() as g:``) every operation whose inputs take part in
differentiation is appended to the graph's tape; ``g.backward(loss)`` then
walks the tape once in reverse insertion order.  Outside a graph nothing is
recorded, which is what inference uses.

There is deliberately no general broadcasting.  Binary elementwise ops need
equal shapes, with one exception: ``add`` accepts a 1-D bias whose length
matches the last axis of the other operand and adds it to every row.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EvaluationError, GraphError, InvalidMaskError, ShapeError

DEFAULT_DTYPE = np.float32

_state = threading.local()


def _active_graph() -> "Graph | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """Dense array plus an optional gradient buffer."""

    __slots__ = ("values", "requires_grad", "grad", "name", "_tracked")

    def __init__(self, values, requires_grad=False, dtype=None, name=None):
        if isinstance(values, Tensor):
            values = values.values
        arr = np.asarray(values, dtype=dtype if dtype is not None else None)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        if any(d <= 0 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._tracked = self.requires_grad

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def size(self) -> int:
        return int(self.values.size)

    def numpy(self) -> np.ndarray:
        return self.values

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else _not_scalar(self)

    def zero_grad(self):
        self.grad = np.zeros_like(self.values)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _not_scalar(t):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


@dataclass
class Node:
    kind: str
    inputs: tuple
    output: Tensor
    backward: Callable


@dataclass
class Graph:
    """Tape of recorded operations, in insertion (= topological) order."""

    nodes: list = field(default_factory=list)

    def __enter__(self):
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def record(self, kind, inputs, output, backward):
        self.nodes.append(Node(kind, tuple(inputs), output, backward))

    def backward(self, seed: Tensor):
        """Accumulate d(seed)/d(leaf) into ``grad`` of every requires_grad leaf."""
        if seed.size != 1:
            raise GraphError(f"backward seed must be a scalar, got shape {seed.shape}")
        produced = {id(n.output) for n in self.nodes}
        if id(seed) not in produced:
            raise GraphError("backward seed was not produced by this graph")

        grads = {id(seed): np.ones_like(seed.values)}
        owned = set()  # buffers allocated here, safe to update in place
        leaves = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not inp._tracked:
                    continue
                key = id(inp)
                buf = grads.get(key)
                if isinstance(gi, SliceGrad):
                    if buf is None:
                        buf = np.zeros(inp.shape, dtype=gi.values.dtype)
                    elif key not in owned:
                        buf = buf.copy()
                    owned.add(key)
                    grads[key] = buf
                    buf[gi.index] += gi.values
                elif buf is None:
                    grads[key] = gi
                elif key in owned:
                    buf += gi
                else:
                    grads[key] = buf + gi
                    owned.add(key)
                if inp.requires_grad and key not in produced:
                    leaves[key] = inp
        for key, leaf in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.values)
            leaf.grad += g.astype(leaf.values.dtype, copy=False)


class SliceGrad:
    """Gradient that is zero outside ``index``; lets the tape accumulate in place."""

    __slots__ = ("index", "values")

    def __init__(self, index, values):
        self.index = index
        self.values = values


def _emit(kind: str, inputs: Sequence[Tensor], values: np.ndarray, backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    out.requires_grad = False
    out.grad = None
    out.name = None
    out._tracked = False
    graph = _active_graph()
    if graph is not None and any(t._tracked for t in inputs):
        out._tracked = True
        graph.record(kind, inputs, out, backward)
    return out


def _same_shape(kind, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` where ``b`` is 2-D and ``a`` has any leading shape."""
    if b.values.ndim != 2 or a.values.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    av, bv = a.values, b.values
    out = av @ bv

    def backward(g):
        ga = g @ bv.T
        a2 = av.reshape(-1, av.shape[-1])
        gb = a2.T @ g.reshape(-1, g.shape[-1]) if av.ndim > 1 else np.outer(av, g)
        return ga, gb

    return _emit("matmul", (a, b), out, backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T (+ b)`` with ``w`` stored as [out, in]; fused matmul/transpose/add."""
    if w.values.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} does not match weight {w.shape}")
    xv, wv = x.values, w.values
    out = xv @ wv.T
    if b is not None:
        out = out + b.values

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ wv
        gw = g2.T @ xv.reshape(-1, xv.shape[-1])
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, w) if b is None else (x, w, b)
    return _emit("linear", inputs, out, backward)


def transpose(x: Tensor) -> Tensor:
    if x.values.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {x.shape}")
    return _emit("transpose", (x,), x.values.T, lambda g: (g.T,))


def batch_matvec(weights: Tensor, values: Tensor) -> Tensor:
    """Per-row weighted sum: out[b] = sum_j weights[b, j] * values[b, j, :]."""
    w, v = weights.values, values.values
    if w.ndim != 2 or v.ndim != 3 or v.shape[:2] != w.shape:
        raise ShapeError(f"batch_matvec: shapes {weights.shape} and {values.shape} are not aligned")
    out = np.einsum("bl,bld->bd", w, v)

    def backward(g):
        return np.einsum("bd,bld->bl", g, v), w[:, :, None] * g[:, None, :]

    return _emit("batch_matvec", (weights, values), out, backward)


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.values, b.values
    if a.shape == b.shape:
        return _emit("add", (a, b), av + bv, lambda g: (g, g))
    if bv.ndim == 1 and av.ndim >= 1 and av.shape[-1] == bv.shape[0]:
        lead = tuple(range(av.ndim - 1))
        return _emit("add_bias", (a, b), av + bv, lambda g: (g, g.sum(axis=lead)))
    raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ (only bias-row addition is supported)")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _emit("sub", (a, b), a.values - b.values, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    av, bv = a.values, b.values
    return _emit("mul", (a, b), av * bv, lambda g: (g * bv, g * av))


def scale(x: Tensor, c: float) -> Tensor:
    c = x.values.dtype.type(c)
    return _emit("scale", (x,), x.values * c, lambda g: (g * c,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.values)
    return _emit("tanh", (x,), y, lambda g: (g * (1 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    xv = x.values
    # split by sign so exp never overflows
    e = np.exp(-np.abs(xv))
    y = np.where(xv >= 0, 1 / (1 + e), e / (1 + e)).astype(xv.dtype, copy=False)
    return _emit("sigmoid", (x,), y, lambda g: (g * y * (1 - y),))


def relu(x: Tensor) -> Tensor:
    xv = x.values
    pos = xv > 0
    return _emit("relu", (x,), np.where(pos, xv, 0).astype(xv.dtype, copy=False), lambda g: (g * pos,))


def absolute(x: Tensor) -> Tensor:
    xv = x.values
    return _emit("abs", (x,), np.abs(xv), lambda g: (g * np.sign(xv),))


def log(x: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(x, floor)``; below the floor the gradient is 0."""
    xv = x.values
    live = xv > floor
    safe = np.where(live, xv, floor if floor > 0 else 1).astype(xv.dtype, copy=False)
    y = np.log(safe)
    if floor <= 0:
        y = np.where(live, y, -np.inf)
    return _emit("log", (x,), y, lambda g: (np.where(live, g / safe, 0).astype(g.dtype, copy=False),))


def where(cond, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise select with a constant boolean condition (broadcast to the operands)."""
    _same_shape("where", a, b)
    cond = np.broadcast_to(np.asarray(cond, dtype=bool), a.shape)
    out = np.where(cond, a.values, b.values)

    def backward(g):
        zero = np.zeros((), dtype=g.dtype)
        return np.where(cond, g, zero), np.where(cond, zero, g)

    return _emit("where", (a, b), out, backward)


def _sig(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_sequence(proj: Tensor, W_hh: Tensor, mask=None, reverse: bool = False) -> Tensor:
    """Run an LSTM over precomputed input projections ``[B, L, 4d]`` in one tape entry.

    ``W_hh`` is the ``[4d, d]`` recurrent weight; gate blocks are ordered
    i, f, g, o and the state starts at zero.  Returns the states after every
    step packed as ``[B, L, 2d]`` (``h`` then ``c``), indexed by position, not
    processing order.  Where ``mask`` is False the state is carried over
    unchanged, so padded tails do not disturb either direction.
    """
    pv, wv = proj.values, W_hh.values
    if pv.ndim != 3 or wv.ndim != 2 or pv.shape[-1] != wv.shape[0] or wv.shape[0] != 4 * wv.shape[1]:
        raise ShapeError(f"lstm_sequence: projections {proj.shape} do not fit recurrent weight {W_hh.shape}")
    batch, steps, _ = pv.shape
    d = wv.shape[1]
    live_all = np.ones((batch, steps), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    dtype = pv.dtype
    order = list(range(steps - 1, -1, -1)) if reverse else list(range(steps))
    h = np.zeros((batch, d), dtype=dtype)
    c = np.zeros((batch, d), dtype=dtype)
    out = np.empty((batch, steps, 2 * d), dtype=dtype)
    cache = []
    for k in order:
        a = pv[:, k] + h @ wv.T
        i, f, o = _sig(a[:, :d]), _sig(a[:, d:2 * d]), _sig(a[:, 3 * d:])
        g = np.tanh(a[:, 2 * d:3 * d])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        live = live_all[:, k:k + 1]
        cache.append((h, c, i, f, g, o, tc, live))
        h = np.where(live, o * tc, h)
        c = np.where(live, c_new, c)
        out[:, k, :d] = h
        out[:, k, d:] = c

    def backward(gout):
        dproj = np.zeros_like(pv)
        dW = np.zeros_like(wv)
        dh = np.zeros((batch, d), dtype=dtype)
        dc = np.zeros((batch, d), dtype=dtype)
        for k, (h_prev, c_prev, i, f, g, o, tc, live) in zip(reversed(order), reversed(cache)):
            gH = gout[:, k, :d] + dh
            gC = gout[:, k, d:] + dc
            gh = np.where(live, gH, 0)
            gc = np.where(live, gC, 0) + gh * o * (1 - tc * tc)
            da = np.concatenate([
                gc * g * i * (1 - i),
                gc * c_prev * f * (1 - f),
                gc * i * (1 - g * g),
                gh * tc * o * (1 - o),
            ], axis=-1)
            dproj[:, k] = da
            dW += da.T @ h_prev
            dh = (da @ wv + np.where(live, 0, gH)).astype(dtype, copy=False)
            dc = (gc * f + np.where(live, 0, gC)).astype(dtype, copy=False)
        return dproj, dW

    return _emit("lstm_sequence", (proj, W_hh), out, backward)


# ---------------------------------------------------------------- normalisation


def softmax(v: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis.  Masked-out (False) positions are exactly 0."""
    x = v.values
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"softmax: mask shape {mask.shape} differs from {x.shape}")
        if not mask.any(axis=-1).all():
            raise InvalidMaskError("softmax: every position of some row is masked")
        x = np.where(mask, x, -np.inf)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = (e / e.sum(axis=-1, keepdims=True)).astype(v.values.dtype, copy=False)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", (v,), y, backward)


# ---------------------------------------------------------------- structure


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: nothing to concatenate")
    ndim = tensors[0].values.ndim
    ax = axis % ndim
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.values.ndim != ndim or any(t.shape[i] != ref[i] for i in range(ndim) if i != ax):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} disagree off axis {axis}")
    out = np.concatenate([t.values for t in tensors], axis=ax)
    cuts = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _emit("concat", tensors, out, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != ref:
            raise ShapeError(f"stack: shapes {ref} and {t.shape} differ")
    out = np.stack([t.values for t in tensors], axis=axis)
    ax = axis % out.ndim

    def backward(g):
        return tuple(np.moveaxis(g, ax, 0))

    return _emit("stack", tensors, out, backward)


def take(x: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    """Contiguous slice ``[start:stop]`` along one axis."""
    ax = axis % x.values.ndim
    if not 0 <= start < stop <= x.shape[ax]:
        raise ShapeError(f"take: [{start}:{stop}] out of range for axis {axis} of {x.shape}")
    idx = [slice(None)] * x.values.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)

    return _emit("take", (x,), x.values[idx], lambda g: (SliceGrad(idx, g),))


def select(x: Tensor, index: int, axis: int = 0) -> Tensor:
    """Pick one index along ``axis``, dropping that axis."""
    ax = axis % x.values.ndim
    idx = [slice(None)] * x.values.ndim
    idx[ax] = index
    idx = tuple(idx)

    return _emit("select", (x,), x.values[idx], lambda g: (SliceGrad(idx, g),))


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.values.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from exc
    src = x.shape
    return _emit("reshape", (x,), out, lambda g: (g.reshape(src),))


def expand(x: Tensor, axis: int, size: int) -> Tensor:
    """Insert a new axis at ``axis`` and repeat ``x`` ``size`` times along it."""
    out = np.repeat(np.expand_dims(x.values, axis), size, axis=axis)
    ax = axis % out.ndim
    return _emit("expand", (x,), out, lambda g: (g.sum(axis=ax),))


def index_rows(table: Tensor, indices) -> Tensor:
    """Row lookup ``table[indices]``; gradients accumulate into the used rows only."""
    indices = np.asarray(indices, dtype=np.int64)
    out = table.values[indices]

    def backward(g):
        full = np.zeros_like(table.values, dtype=g.dtype)
        np.add.at(full, indices.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (full,)

    return _emit("index_rows", (table,), out, backward)


def pick(x: Tensor, indices) -> Tensor:
    """out[..., ] = x[..., indices[...]] over the last axis (one entry per row)."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.shape != x.shape[:-1]:
        raise ShapeError(f"pick: index shape {indices.shape} does not match rows of {x.shape}")
    out = np.take_along_axis(x.values, indices[..., None], axis=-1)[..., 0]

    def backward(g):
        full = np.zeros_like(x.values, dtype=g.dtype)
        np.put_along_axis(full, indices[..., None], g[..., None], axis=-1)
        return (full,)

    return _emit("pick", (x,), out, backward)


def total(x: Tensor) -> Tensor:
    """Sum of all elements, as a 0-d tensor."""
    src = x.values
    return _emit("sum", (x,), np.asarray(src.sum(), dtype=src.dtype), lambda g: (np.full_like(src, g),))


# ---------------------------------------------------------------- gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str | None
    per_param: dict
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    @property
    def failing(self) -> list:
        return [name for name, err in self.per_param.items() if err >= self.tolerance]

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} max_rel_error={self.max_rel_error:.3e} worst={self.worst_param} tol={self.tolerance:g}"


def relative_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


def grad_check(f: Callable[[], Tensor], params, eps: float = 1e-5, tol: float = 1e-4,
               analytic: dict | None = None) -> GradCheckReport:
    """Compare backward gradients with central differences, coordinate by coordinate.

    ``params`` maps names to tensors that ``f`` closes over; ``f`` must rebuild the
    computation from their current values on every call.  ``analytic`` overrides
    the backward gradients (used to test the checker itself).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = dict(params)
    if analytic is None:
        for p in params.values():
            p.zero_grad()
        with Graph() as g:
            out = f()
            g.backward(out)
        analytic = {name: p.grad.copy() for name, p in params.items()}

    def evaluate():
        val = f().values
        if not np.all(np.isfinite(val)):
            raise EvaluationError("grad_check: objective is not finite")
        return float(val)

    per_param = {}
    for name, p in params.items():
        flat = p.values.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = evaluate()
            flat[i] = orig - eps
            down = evaluate()
            flat[i] = orig
            numeric[i] = (up - down) / (2 * eps)
        per_param[name] = float(relative_error(numeric, analytic[name].reshape(-1)).max())

    worst = max(per_param, key=per_param.get) if per_param else None
    return GradCheckReport(per_param.get(worst, 0.0), worst, per_param, tol)
