"""PC-RNN: three encoders, an attention-of-attention decoder and time/category heads.

Encoders: a bidirectional LSTM stack over the patent's observed citations
(inter-event gap plus category embedding per step) and two gap-only stacks over
the assignee and inventor citation chains.  At every decoder step the decoder
hidden state attends over each encoder's outputs, the three resulting context
vectors are themselves weighted by a second softmax, and the weighted contexts
plus the decoder state feed the prediction layer.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import nn
from . import tensor as T
from .errors import ConfigError, ContractError, OrderingError, ShapeError, VocabularyError
from .tensor import Graph, Tensor

CE_FLOOR = 1e-12
MODES = ("teacher_forced", "free_running")


@dataclass
class ModelConfig:
    d_patent: int = 32
    d_assignee: int = 16
    d_inventor: int = 16
    embed_dim: int = 16
    num_layers: int = 2
    vocab: int = 7
    attn_dim: int = 32
    pfn_dim: int = 64
    horizon: int | None = None
    max_len: int = 200
    gap_scale: float = 1.0
    dtype: str = "float32"

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("d_patent", "d_assignee", "d_inventor", "embed_dim", "num_layers",
                     "attn_dim", "pfn_dim", "max_len"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"model.{name} must be a positive integer, got {value!r}")
        if not isinstance(self.vocab, (int, np.integer)) or self.vocab < 2:
            raise ConfigError(f"model.vocab must be an integer >= 2, got {self.vocab!r}")
        if self.horizon is not None and self.horizon < 1:
            raise ConfigError(f"model.horizon must be positive or null, got {self.horizon!r}")
        if not self.gap_scale > 0:
            raise ConfigError(f"model.gap_scale must be positive, got {self.gap_scale!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"model.dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def context_dim(self) -> int:
        return self.d_patent + self.d_assignee + self.d_inventor

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class EncoderOutputs:
    patent: Tensor
    patent_mask: np.ndarray
    assignee: Tensor
    assignee_mask: np.ndarray
    inventor: Tensor
    inventor_mask: np.ndarray
    decoder_state: list
    keys: dict = field(default_factory=dict)


@dataclass
class AttentionTrace:
    """Per decode step: alpha rows for each encoder ``[B, L_x]`` and beta ``[B, 3]``."""

    alpha_patent: list = field(default_factory=list)
    alpha_assignee: list = field(default_factory=list)
    alpha_inventor: list = field(default_factory=list)
    beta: list = field(default_factory=list)

    def append(self, row: dict):
        self.alpha_patent.append(row["patent"])
        self.alpha_assignee.append(row["assignee"])
        self.alpha_inventor.append(row["inventor"])
        self.beta.append(row["beta"])


@dataclass
class Prediction:
    gap: float
    probs: np.ndarray

    @property
    def category(self) -> int:
        return int(np.argmax(self.probs))


@dataclass
class Forecast:
    """Batched forecast: gaps ``[B, l]``, probabilities ``[B, l, V]``."""

    gaps: np.ndarray
    probs: np.ndarray
    trace: AttentionTrace

    @property
    def categories(self) -> np.ndarray:
        return self.probs.argmax(axis=-1)

    def predictions(self, row: int = 0) -> list:
        return [Prediction(float(g), p) for g, p in zip(self.gaps[row], self.probs[row])]


class Alignment(nn.Module):
    """Concat scoring ``v . tanh(W [query; key])`` with ``W`` split into query/key blocks."""

    def __init__(self, query_dim, key_dim, attn_dim, rng, dtype=np.float32):
        self.W = nn.parameter(nn.glorot(rng, (attn_dim, query_dim + key_dim), dtype))
        self.V = nn.parameter(nn.glorot(rng, (1, attn_dim), dtype))

    def keys(self, outputs: Tensor) -> Tensor:
        """Key-side projection of a whole ``[B, L, K]`` output sequence."""
        k = outputs.shape[-1]
        w_key = T.take(self.W, self.W.shape[1] - k, self.W.shape[1], axis=1)
        return T.linear(outputs, w_key)

    def scores(self, query: Tensor, keys: Tensor) -> Tensor:
        """Alignment scores ``[B, L]`` of one query against precomputed keys."""
        batch, steps, _ = keys.shape
        d = query.shape[-1]
        w_query = T.take(self.W, 0, d, axis=1)
        q = T.expand(T.linear(query, w_query), 1, steps)
        z = T.tanh(T.add(keys, q))
        return T.reshape(T.linear(z, self.V), (batch, steps))

    def score(self, query: Tensor, key: Tensor) -> Tensor:
        """Score of a single ``[B, K]`` key; returns ``[B]``."""
        z = T.tanh(T.linear(T.concat([query, key], axis=-1), self.W))
        return T.reshape(T.linear(z, self.V), (query.shape[0],))


def attend_context(h_d: Tensor, outputs: Tensor, align: Alignment, mask=None, keys=None):
    """Context vector over one encoder's outputs; returns ``(context [B, K], alpha [B, L])``."""
    if outputs.values.ndim != 3 or h_d.shape[0] != outputs.shape[0]:
        raise ShapeError(f"attend_context: decoder state {h_d.shape} vs outputs {outputs.shape}")
    if h_d.shape[-1] + outputs.shape[-1] != align.W.shape[1]:
        raise ShapeError(f"attend_context: alignment weight {align.W.shape} does not fit "
                         f"query {h_d.shape[-1]} + key {outputs.shape[-1]}")
    if keys is None:
        keys = align.keys(outputs)
    e = align.scores(h_d, keys)
    alpha = T.softmax(e, mask)
    return T.batch_matvec(alpha, outputs), alpha


def fuse_contexts(h_d: Tensor, contexts, aligns):
    """Second-level attention: weight each context by a softmax over per-context scores.

    Returns ``(fused [B, sum K_x], beta [B, 3])``.
    """
    scores = T.stack([a.score(h_d, c) for a, c in zip(aligns, contexts)], axis=1)
    beta = T.softmax(scores)
    parts = []
    for x, c in enumerate(contexts):
        weight = T.expand(T.select(beta, x, axis=1), 1, c.shape[-1])
        parts.append(T.mul(weight, c))
    return T.concat(parts, axis=-1), beta


def attentional_state(fused: Tensor, h_d: Tensor, V_c: Tensor) -> Tensor:
    return T.relu(T.linear(T.concat([fused, h_d], axis=-1), V_c))


class PCRNN(nn.Module):
    def __init__(self, config: ModelConfig | None = None, seed: int = 0):
        config = config or ModelConfig()
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        dt = config.np_dtype
        c = config
        step_in = 1 + c.embed_dim
        self.embedding = nn.Embedding(c.vocab, c.embed_dim, rng, dt)
        self.enc_patent = nn.BiLSTM(step_in, c.d_patent, c.num_layers, rng, dt)
        self.enc_assignee = nn.BiLSTM(1, c.d_assignee, c.num_layers, rng, dt)
        self.enc_inventor = nn.BiLSTM(1, c.d_inventor, c.num_layers, rng, dt)
        self.null_assignee = nn.parameter(rng.uniform(-0.1, 0.1, c.d_assignee).astype(dt))
        self.null_inventor = nn.parameter(rng.uniform(-0.1, 0.1, c.d_inventor).astype(dt))
        self.decoder = nn.UniLSTM(step_in, c.d_patent, c.num_layers, rng, dt)
        self.attn_patent = Alignment(c.d_patent, c.d_patent, c.attn_dim, rng, dt)
        self.attn_assignee = Alignment(c.d_patent, c.d_assignee, c.attn_dim, rng, dt)
        self.attn_inventor = Alignment(c.d_patent, c.d_inventor, c.attn_dim, rng, dt)
        self.fuse_patent = Alignment(c.d_patent, c.d_patent, c.attn_dim, rng, dt)
        self.fuse_assignee = Alignment(c.d_patent, c.d_assignee, c.attn_dim, rng, dt)
        self.fuse_inventor = Alignment(c.d_patent, c.d_inventor, c.attn_dim, rng, dt)
        self.V_c = nn.parameter(nn.glorot(rng, (c.d_patent, c.context_dim + c.d_patent), dt))
        self.pfn = nn.PFN(c.d_patent, c.pfn_dim, rng, dt)
        self.time_head = nn.Linear(c.d_patent, 1, rng, dtype=dt)
        # one mean gap in scaled units, so the clamp starts open
        self.time_head.b.values[...] = 1.0
        self.category_head = nn.Linear(c.d_patent, c.vocab, rng, dtype=dt)

    # ------------------------------------------------------------ parameters

    def state_dict(self) -> dict:
        return {name: p.values.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict):
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise ContractError(f"state is missing parameters: {sorted(missing)}")
        for name, p in params.items():
            values = np.asarray(state[name])
            if values.shape != p.shape:
                raise ShapeError(f"parameter {name}: stored shape {values.shape} != {p.shape}")
            p.values[...] = values

    # ------------------------------------------------------------ helpers

    def _const(self, values) -> Tensor:
        return Tensor(np.asarray(values, dtype=self.config.np_dtype))

    def _step_input(self, gaps, cats) -> Tensor:
        """Per-step input ``[gap; embedding(category)]`` for any leading shape."""
        gaps = np.asarray(gaps) * self.config.gap_scale
        return T.concat([self._const(gaps[..., None]), nn.embedding_lookup(cats, self.embedding)], axis=-1)

    def _check_categories(self, cats, mask=None):
        cats = np.asarray(cats)
        live = cats if mask is None else cats[np.asarray(mask, dtype=bool)]
        bad = live[(live < 0) | (live >= self.config.vocab)]
        if bad.size:
            raise VocabularyError(f"category index {int(bad.flat[0])} outside vocabulary of size {self.config.vocab}")

    @staticmethod
    def _check_gaps(gaps, mask, what):
        live = gaps if mask is None else gaps[np.asarray(mask, dtype=bool)]
        if np.any(live < 0):
            raise OrderingError(f"{what} events are not time-sorted (negative gap)")

    # ------------------------------------------------------------ encoders

    def encode_patent(self, gaps, cats, mask=None):
        """Bidirectional encoding of the observed patent events; returns ``(outputs, finals)``."""
        gaps = np.atleast_2d(np.asarray(gaps))
        cats = np.atleast_2d(np.asarray(cats))
        self._check_categories(cats, mask)
        self._check_gaps(gaps, mask, "patent")
        if gaps.shape[1] > self.config.max_len:
            raise ContractError(f"patent sequence longer than max_len={self.config.max_len}")
        return self.enc_patent(self._step_input(gaps, cats), mask)

    def encode_aux(self, which: str, gaps, mask=None, empty=None):
        """Gap-only encoding of an assignee or inventor chain.

        Rows flagged ``empty`` get the learned null vector at position 0, which
        is then their only attendable position.  Returns ``(outputs, attend_mask)``.
        """
        stack, null = {
            "assignee": (self.enc_assignee, self.null_assignee),
            "inventor": (self.enc_inventor, self.null_inventor),
        }[which]
        gaps = np.atleast_2d(np.asarray(gaps))
        batch, steps = gaps.shape
        mask = np.ones((batch, steps), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        self._check_gaps(gaps, mask, which)
        empty = ~mask.any(axis=1) if empty is None else np.asarray(empty, dtype=bool)
        outputs, _ = stack(self._const(gaps[..., None] * self.config.gap_scale), mask)
        attend = mask.copy()
        if empty.any():
            slot = np.zeros((batch, steps, 1), dtype=bool)
            slot[empty, 0, 0] = True
            filler = T.expand(T.expand(null, 0, batch), 1, steps)
            outputs = T.where(slot, filler, outputs)
            attend[empty, 0] = True
        return outputs, attend

    def encode(self, batch) -> EncoderOutputs:
        o_p, finals = self.encode_patent(batch.patent_gaps, batch.patent_cats, batch.patent_mask)
        o_a, m_a = self.encode_aux("assignee", batch.assignee_gaps, batch.assignee_mask, batch.assignee_empty)
        o_v, m_v = self.encode_aux("inventor", batch.inventor_gaps, batch.inventor_mask, batch.inventor_empty)
        state = [fwd for fwd, _ in finals]
        keys = {
            "patent": self.attn_patent.keys(o_p),
            "assignee": self.attn_assignee.keys(o_a),
            "inventor": self.attn_inventor.keys(o_v),
        }
        return EncoderOutputs(o_p, np.asarray(batch.patent_mask, dtype=bool), o_a, m_a, o_v, m_v, state, keys)

    # ------------------------------------------------------------ decoder

    def attend(self, h_d: Tensor, enc: EncoderOutputs):
        """Both attention levels for one decoder state; returns ``(attentional state, trace row)``."""
        c_p, a_p = attend_context(h_d, enc.patent, self.attn_patent, enc.patent_mask, enc.keys.get("patent"))
        c_a, a_a = attend_context(h_d, enc.assignee, self.attn_assignee, enc.assignee_mask, enc.keys.get("assignee"))
        c_v, a_v = attend_context(h_d, enc.inventor, self.attn_inventor, enc.inventor_mask, enc.keys.get("inventor"))
        fused, beta = fuse_contexts(h_d, [c_p, c_a, c_v], [self.fuse_patent, self.fuse_assignee, self.fuse_inventor])
        h_bar = attentional_state(fused, h_d, self.V_c)
        row = {"patent": a_p.values, "assignee": a_a.values, "inventor": a_v.values, "beta": beta.values}
        return h_bar, row

    def predict_heads(self, h_bar: Tensor):
        """Returns ``(gap >= 0 [B], category probabilities [B, V])``.

        The time head works in units of ``1 / gap_scale``; the returned gap is in
        normalised time.
        """
        h_tilde = self.pfn(h_bar)
        gap = T.reshape(T.relu(self.time_head(h_tilde)), (h_bar.shape[0],))
        if self.config.gap_scale != 1.0:
            gap = T.scale(gap, 1.0 / self.config.gap_scale)
        probs = T.softmax(self.category_head(h_tilde))
        return gap, probs

    def decode_step(self, prev_gap, prev_cat, state, enc: EncoderOutputs):
        """One decoder step from the previous event; returns ``(gap, probs, trace row, state)``."""
        prev_cat = np.atleast_1d(np.asarray(prev_cat))
        self._check_categories(prev_cat)
        x = self._step_input(np.atleast_1d(np.asarray(prev_gap)), prev_cat)
        h_d, state = self.decoder(x, state)
        h_bar, row = self.attend(h_d, enc)
        gap, probs = self.predict_heads(h_bar)
        return gap, probs, row, state

    def forward(self, batch, mode: str = "teacher_forced", steps: int | None = None):
        """Run the decoder; returns ``(list of (gap, probs) tensors, AttentionTrace)``.

        ``teacher_forced`` feeds the true target event back after each step;
        ``free_running`` feeds ``(predicted gap, argmax category)``.
        """
        if mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {mode!r}")
        if steps is None:
            steps = batch.target_gaps.shape[1]
        if steps < 1:
            raise ContractError("forecast horizon l must be at least 1")
        if mode == "teacher_forced" and batch.target_gaps.shape[1] < steps - 1:
            raise ContractError("teacher forcing needs l - 1 known targets")
        enc = self.encode(batch)
        state = enc.decoder_state
        gap_in, cat_in = np.asarray(batch.last_gap), np.asarray(batch.last_cat)
        outputs, trace = [], AttentionTrace()
        for j in range(steps):
            gap, probs, row, state = self.decode_step(gap_in, cat_in, state, enc)
            outputs.append((gap, probs))
            trace.append(row)
            if mode == "teacher_forced" and j < batch.target_gaps.shape[1]:
                gap_in, cat_in = batch.target_gaps[:, j], batch.target_cats[:, j]
                if batch.target_mask is not None:
                    cat_in = np.where(batch.target_mask[:, j], cat_in, 0)
            else:
                gap_in, cat_in = gap.values.copy(), probs.values.argmax(axis=-1)
        return outputs, trace

    def forecast_batch(self, batch, steps: int | None = None, mode: str = "free_running") -> Forecast:
        outputs, trace = self.forward(batch, mode, steps)
        gaps = np.stack([g.values for g, _ in outputs], axis=1)
        probs = np.stack([p.values for _, p in outputs], axis=1)
        return Forecast(gaps, probs, trace)

    def forecast(self, example, l: int | None = None, mode: str = "free_running") -> Forecast:
        """Forecast the next ``l`` events of a single :class:`TrainingExample`."""
        from .data.dataset import collate

        if l is None:
            l = len(example.target_times) or self.config.horizon
        if l is None or l < 1:
            raise ContractError("forecast horizon l must be at least 1")
        return self.forecast_batch(collate([example], dtype=self.config.np_dtype), l, mode)


def suggest_gap_scale(examples) -> float:
    """Reciprocal of the mean positive observed gap, rounded to 2 significant digits."""
    gaps = np.concatenate([np.diff(np.concatenate([ex.times, ex.target_times])) for ex in examples])
    gaps = gaps[gaps > 0]
    if gaps.size == 0:
        return 1.0
    return float(f"{1.0 / gaps.mean():.2g}")


@dataclass
class LossTerms:
    total: Tensor
    time: float
    category: float


def sequence_loss(outputs, target_gaps, target_cats, target_mask=None,
                  time_weight: float = 1.0) -> LossTerms:
    """Sum over steps of ``-log p(true category) + |gap - true gap|``, averaged over the batch.

    Masked target steps contribute nothing.  ``time_weight`` multiplies the
    time term inside ``total``; the reported ``time`` component is unweighted.
    """
    target_gaps = np.asarray(target_gaps)
    target_cats = np.asarray(target_cats)
    if target_gaps.ndim == 1:
        target_gaps, target_cats = target_gaps[None], target_cats[None]
    if len(outputs) != target_gaps.shape[1] or target_cats.shape != target_gaps.shape:
        raise ContractError(f"loss: {len(outputs)} predictions for {target_gaps.shape[1]} targets")
    batch = target_gaps.shape[0]
    dtype = outputs[0][0].dtype
    vocab = outputs[0][1].shape[-1]
    mask = np.ones(target_gaps.shape, dtype=bool) if target_mask is None else np.asarray(target_mask, dtype=bool)
    bad = target_cats[mask][(target_cats[mask] < 0) | (target_cats[mask] >= vocab)]
    if bad.size:
        raise VocabularyError(f"target category {int(bad.flat[0])} outside vocabulary of size {vocab}")
    safe_cats = np.where(mask, target_cats, 0)

    time_terms, cat_terms = [], []
    for j, (gap, probs) in enumerate(outputs):
        truth = Tensor(target_gaps[:, j].astype(dtype))
        time_terms.append(T.absolute(T.sub(gap, truth)))
        cat_terms.append(T.scale(T.log(T.pick(probs, safe_cats[:, j]), floor=CE_FLOOR), -1.0))
    zero = Tensor(np.zeros((batch, len(outputs)), dtype=dtype))
    time_mat = T.where(mask, T.stack(time_terms, axis=1), zero)
    cat_mat = T.where(mask, T.stack(cat_terms, axis=1), zero)
    time_sum = T.total(time_mat)
    cat_sum = T.total(cat_mat)
    weighted = time_sum if time_weight == 1.0 else T.scale(time_sum, time_weight)
    total = T.scale(T.add(weighted, cat_sum), 1.0 / batch)
    return LossTerms(total, float(time_sum.values) / batch, float(cat_sum.values) / batch)


def loss(predictions, targets) -> float:
    """Loss of plain predictions against ``(gap, category)`` targets, no graph involved."""
    if len(predictions) != len(targets):
        raise ContractError(f"loss: {len(predictions)} predictions for {len(targets)} targets")
    value = 0.0
    for pred, (gap, cat) in zip(predictions, targets):
        probs = np.asarray(pred.probs, dtype=np.float64)
        if not 0 <= cat < probs.shape[-1]:
            raise VocabularyError(f"target category {cat} outside vocabulary of size {probs.shape[-1]}")
        value += -np.log(max(probs[cat], CE_FLOOR)) + abs(pred.gap - gap)
    return float(value)


def batch_loss(model: PCRNN, batch, mode: str = "teacher_forced", time_weight: float = 1.0) -> LossTerms:
    outputs, _ = model.forward(batch, mode)
    return sequence_loss(outputs, batch.target_gaps, batch.target_cats, batch.target_mask, time_weight)


def loss_and_grad(model: PCRNN, batch, mode: str = "teacher_forced", time_weight: float = 1.0) -> LossTerms:
    """Forward + backward; gradients are accumulated into the model's parameters."""
    with Graph() as g:
        terms = batch_loss(model, batch, mode, time_weight)
        g.backward(terms.total)
    return terms
