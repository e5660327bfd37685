"""
Gradients on the tape, checked by finite differences
=====================================================

Every layer in the package is built from a small reverse-mode tape.  This
script differentiates a tiny expression by hand and by the tape, then runs
the full-model check on the micro configuration.
"""

import numpy as np

from pcrnn import tensor as T
from pcrnn.gradcheck import run_micro_gradcheck
from pcrnn.tensor import Graph, Tensor, grad_check

# %%
# y = sum(tanh(W x)); the tape records each op inside a Graph block
rng = np.random.default_rng(0)
W = Tensor(rng.normal(size=(3, 4)), requires_grad=True, name="W")
x = Tensor(rng.normal(size=(2, 4)))

with Graph() as g:
    y = T.total(T.tanh(T.linear(x, W)))
    g.backward(y)

# closed form: dy/dW = (1 - tanh(x W^T)^2)^T x
z = np.tanh(x.values @ W.values.T)
by_hand = (1 - z ** 2).T @ x.values
print("tape vs closed form, max abs diff:", np.abs(W.grad - by_hand).max())

# %%
# the same check through central differences
report = grad_check(lambda: T.total(T.tanh(T.linear(x, W))), {"W": W})
print(report.summary())

# %%
# full model: 4/2/2 widths, three observations, two targets, vocabulary of 3
report = run_micro_gradcheck()
print(report.summary())
for name, err in sorted(report.per_param.items(), key=lambda kv: -kv[1])[:5]:
    print(f"  {err:.2e}  {name}")
