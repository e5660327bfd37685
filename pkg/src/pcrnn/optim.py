"""Adam with bias correction, plus global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, OptimizerError


def clip_global_norm(grads, max_norm: float = 5.0):
    """Scale all gradients by ``max_norm / g`` when their joint L2 norm ``g`` exceeds ``max_norm``.

    ``grads`` is a dict or list of arrays; returns ``(scaled grads, factor)``.
    """
    if max_norm <= 0:
        raise ContractError(f"max_norm must be positive, got {max_norm}")
    items = grads.values() if isinstance(grads, dict) else grads
    norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in items)))
    factor = max_norm / norm if norm > max_norm else 1.0
    if factor == 1.0:
        return grads, 1.0
    if isinstance(grads, dict):
        return {k: g * g.dtype.type(factor) for k, g in grads.items()}, factor
    return [g * g.dtype.type(factor) for g in grads], factor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    """Adam over a ``{name: Tensor}`` mapping; reads each tensor's ``grad``."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip: float | None = 5.0):
        self.params = dict(params)
        self.clip = clip
        self.state = AdamState(lr, beta1, beta2, eps)
        for name, p in self.params.items():
            self.state.m[name] = np.zeros_like(p.values)
            self.state.v[name] = np.zeros_like(p.values)
        self.last_clip_factor = 1.0

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        grads = {}
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.values)
            grads[name] = g
        if self.clip is not None:
            grads, self.last_clip_factor = clip_global_norm(grads, self.clip)
        adam_step({n: p.values for n, p in self.params.items()}, grads, self.state)


def adam_step(params: dict, grads: dict, state: AdamState):
    """In-place Adam update of the arrays in ``params``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, theta in params.items():
        g = grads[name]
        if theta.shape != g.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {theta.shape} for {name!r}")
        m = state.m.setdefault(name, np.zeros_like(theta))
        v = state.v.setdefault(name, np.zeros_like(theta))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        theta -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(theta.dtype, copy=False)
    return params, state
