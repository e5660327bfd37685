"""Reusable layers built on :mod:`pcrnn.tensor`.

Weights are stored ``[out, in]`` and applied to row-major batches, so a
batch of inputs is ``[batch, in]`` (or ``[batch, steps, in]``) throughout.
LSTM gate blocks are ordered input, forget, cell, output.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import EmptyInputError, ShapeError, VocabularyError
from .tensor import Tensor


def glorot(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    fan_out, fan_in = shape[0], shape[-1] if len(shape) > 1 else 1
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def parameter(values, name=None) -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


class Module:
    """Parameter container; sub-modules and parameters are found by attribute scan."""

    def named_parameters(self, prefix=""):
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{name}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng, bias=True, dtype=np.float32):
        self.W = parameter(glorot(rng, (out_dim, in_dim), dtype))
        self.b = parameter(np.zeros(out_dim, dtype=dtype)) if bias else None

    @property
    def in_dim(self):
        return self.W.shape[1]

    @property
    def out_dim(self):
        return self.W.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.W, self.b)


class Embedding(Module):
    def __init__(self, vocab, dim, rng, dtype=np.float32):
        self.table = parameter(glorot(rng, (vocab, dim), dtype))

    @property
    def vocab(self):
        return self.table.shape[0]

    def __call__(self, indices) -> Tensor:
        return embedding_lookup(indices, self)


def embedding_lookup(indices, table: Embedding) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    bad = idx[(idx < 0) | (idx >= table.vocab)]
    if bad.size:
        raise VocabularyError(f"category index {int(bad.flat[0])} outside vocabulary of size {table.vocab}")
    return T.index_rows(table.table, idx)


class LSTMCell(Module):
    def __init__(self, in_dim, hidden, rng, dtype=np.float32):
        self.W_ih = parameter(glorot(rng, (4 * hidden, in_dim), dtype))
        self.W_hh = parameter(glorot(rng, (4 * hidden, hidden), dtype))
        b = np.zeros(4 * hidden, dtype=dtype)
        b[hidden:2 * hidden] = 1.0
        self.b = parameter(b)

    @property
    def hidden(self):
        return self.W_hh.shape[1]

    @property
    def in_dim(self):
        return self.W_ih.shape[1]


def lstm_cell_step(x: Tensor, h: Tensor, c: Tensor, cell: LSTMCell):
    """One gated update; returns ``(h', c')``."""
    if x.shape[-1] != cell.in_dim or h.shape[-1] != cell.hidden or c.shape != h.shape:
        raise ShapeError(
            f"lstm_cell_step: x {x.shape}, h {h.shape}, c {c.shape} do not fit cell "
            f"(in={cell.in_dim}, hidden={cell.hidden})")
    gates = T.add(T.linear(x, cell.W_ih, cell.b), T.linear(h, cell.W_hh))
    return _gate_update(gates, c, cell.hidden)


def _gate_update(gates, c, d):
    i = T.sigmoid(T.take(gates, 0, d))
    f = T.sigmoid(T.take(gates, d, 2 * d))
    g = T.tanh(T.take(gates, 2 * d, 3 * d))
    o = T.sigmoid(T.take(gates, 3 * d, 4 * d))
    c_new = T.add(T.mul(f, c), T.mul(i, g))
    h_new = T.mul(o, T.tanh(c_new))
    return h_new, c_new


def zeros(batch, dim, dtype) -> Tensor:
    return Tensor(np.zeros((batch, dim), dtype=dtype))


def _run_direction(x, mask, cell, reverse):
    """One LSTM direction over ``[B, L, in]``; returns ``(hidden [B, L, d], (h, c) final)``.

    Steps where ``mask`` is False leave the state untouched, so the forward
    direction ends on each row's last real event and the backward direction
    starts from zero at it.
    """
    d = cell.hidden
    states = T.lstm_sequence(T.linear(x, cell.W_ih, cell.b), cell.W_hh, mask, reverse)
    last = T.select(states, 0 if reverse else x.shape[1] - 1, axis=1)
    return T.take(states, 0, d), (T.take(last, 0, d), T.take(last, d, 2 * d))


class BiLSTM(Module):
    """Stacked bidirectional LSTM whose per-step output is forward + backward hidden."""

    def __init__(self, in_dim, hidden, num_layers, rng, dtype=np.float32):
        self.forward_cells = []
        self.backward_cells = []
        for layer in range(num_layers):
            width = in_dim if layer == 0 else hidden
            self.forward_cells.append(LSTMCell(width, hidden, rng, dtype))
            self.backward_cells.append(LSTMCell(width, hidden, rng, dtype))

    @property
    def hidden(self):
        return self.forward_cells[0].hidden

    def __call__(self, inputs: Tensor, mask=None):
        return bilstm_encode(inputs, self, mask)


def bilstm_encode(inputs: Tensor, stack: BiLSTM, mask=None):
    """Encode ``[B, L, in]`` inputs; returns ``(outputs [B, L, d], finals)``.

    ``finals[layer]`` is ``((h_fwd, c_fwd), (h_bwd, c_bwd))``.  Layer ``k+1``
    consumes the summed outputs of layer ``k``.
    """
    if not isinstance(inputs, Tensor):
        arr = np.asarray(inputs)
        if arr.ndim != 3 or arr.shape[1] == 0:
            raise EmptyInputError("bilstm_encode: need a non-empty [batch, steps, features] input")
        inputs = Tensor(arr)
    if inputs.values.ndim != 3:
        raise ShapeError(f"bilstm_encode: expected [batch, steps, features], got {inputs.shape}")
    batch, steps = inputs.shape[:2]
    mask = np.ones((batch, steps), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != (batch, steps):
        raise ShapeError(f"bilstm_encode: mask {mask.shape} does not match inputs {inputs.shape}")
    finals = []
    x = inputs
    for fcell, bcell in zip(stack.forward_cells, stack.backward_cells):
        fwd, fstate = _run_direction(x, mask, fcell, reverse=False)
        bwd, bstate = _run_direction(x, mask, bcell, reverse=True)
        x = T.add(fwd, bwd)
        finals.append((fstate, bstate))
    return x, finals


class UniLSTM(Module):
    """Stacked unidirectional LSTM advanced one step at a time."""

    def __init__(self, in_dim, hidden, num_layers, rng, dtype=np.float32):
        self.cells = [LSTMCell(in_dim if k == 0 else hidden, hidden, rng, dtype)
                      for k in range(num_layers)]

    @property
    def hidden(self):
        return self.cells[0].hidden

    def initial_state(self, batch, dtype):
        return [(zeros(batch, self.hidden, dtype), zeros(batch, self.hidden, dtype)) for _ in self.cells]

    def __call__(self, x, state, trace=None):
        return unilstm_step(x, state, self, trace)


def unilstm_step(x: Tensor, state, stack: UniLSTM, trace=None):
    """Advance every layer once; returns ``(top hidden, new state)``.

    If ``trace`` is a list, the input fed to each layer is appended to it.
    """
    if len(state) != len(stack.cells):
        raise ShapeError(f"unilstm_step: state has {len(state)} layers, stack has {len(stack.cells)}")
    new_state = []
    inp = x
    for cell, (h, c) in zip(stack.cells, state):
        if trace is not None:
            trace.append(inp)
        h, c = lstm_cell_step(inp, h, c, cell)
        new_state.append((h, c))
        inp = h
    return inp, new_state


class PFN(Module):
    """Two linear maps with a ReLU in between."""

    def __init__(self, dim, inner, rng, dtype=np.float32):
        self.inner = Linear(dim, inner, rng, dtype=dtype)
        self.outer = Linear(inner, dim, rng, dtype=dtype)

    def __call__(self, h: Tensor) -> Tensor:
        return pfn_apply(h, self)


def pfn_apply(h: Tensor, pfn: PFN) -> Tensor:
    return pfn.outer(T.relu(pfn.inner(h)))
