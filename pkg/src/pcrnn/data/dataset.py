"""Training examples, time normalisation, splitting and padded batches."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace

import numpy as np

from ..errors import ContractError, NormalizationError, OrderingError
from .events import CitationEvent, SequenceRecord, check_sorted

AUX_LIMIT = 200


@dataclass
class TrainingExample:
    """First ``n`` events of a patent chain as input, the next ``l`` as targets."""

    patent_id: str
    times: np.ndarray
    cats: np.ndarray
    assignee: np.ndarray
    inventor: np.ndarray
    target_times: np.ndarray
    target_cats: np.ndarray
    chain_length: int
    t_min: float = 0.0
    t_max: float = 1.0

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def l(self) -> int:
        return len(self.target_times)

    @property
    def gaps(self) -> np.ndarray:
        return event_gaps(self.times)

    @property
    def target_gaps(self) -> np.ndarray:
        prev = np.concatenate([self.times[-1:], self.target_times[:-1]])
        return self.target_times - prev

    def validate(self, min_len: int = 20, max_len: int = 200):
        check_sorted(np.concatenate([self.times, self.target_times]), f"patent {self.patent_id}")
        check_sorted(self.assignee, f"patent {self.patent_id} assignee chain")
        check_sorted(self.inventor, f"patent {self.patent_id} inventor chain")
        if not min_len <= self.chain_length <= max_len:
            raise ContractError(f"patent {self.patent_id}: chain length {self.chain_length} outside [{min_len}, {max_len}]")
        if self.n + self.l > self.chain_length:
            raise ContractError(f"patent {self.patent_id}: n + l exceeds chain length")
        cutoff = self.times[-1]
        if (self.assignee.size and self.assignee.max() >= cutoff) or (self.inventor.size and self.inventor.max() >= cutoff):
            raise ContractError(f"patent {self.patent_id}: auxiliary event at or after the observation end")


def event_gaps(times) -> np.ndarray:
    """Inter-event gaps with 0 for the first event."""
    times = np.asarray(times, dtype=np.float64)
    if times.size == 0:
        return times
    return np.concatenate([[0.0], np.diff(times)])


def aux_window(times, cutoff: float, limit: int = AUX_LIMIT) -> np.ndarray:
    """Events strictly before ``cutoff``, keeping the most recent ``limit``."""
    times = np.asarray(times, dtype=np.float64)
    kept = times[times < cutoff]
    return kept[-limit:] if limit else kept[:0]


def make_example(record: SequenceRecord, n: int, l: int | None = None, task: str = "main",
                 aux_limit: int = AUX_LIMIT, t_min: float = 0.0, t_max: float = 1.0) -> TrainingExample:
    """Split ``record`` after its ``n``-th citation; ``l`` defaults to the rest of the chain."""
    times = record.times
    check_sorted(times, f"patent {record.patent_id} citations")
    total = len(times)
    if not 1 <= n <= total:
        raise ContractError(f"patent {record.patent_id}: n={n} outside [1, {total}]")
    if l is None:
        l = total - n
    if n + l > total:
        raise ContractError(f"patent {record.patent_id}: n + l = {n + l} exceeds chain length {total}")
    cats = record.categories(task)
    cutoff = times[n - 1]
    return TrainingExample(
        patent_id=record.patent_id,
        times=times[:n],
        cats=cats[:n],
        assignee=aux_window(record.assignee_events, cutoff, aux_limit),
        inventor=aux_window(record.inventor_events, cutoff, aux_limit),
        target_times=times[n:n + l],
        target_cats=cats[n:n + l],
        chain_length=total,
        t_min=t_min,
        t_max=t_max,
    )


def observation_count(length: int, fraction: float) -> int:
    return max(1, int(math.floor(fraction * length)))


def examples_at_fraction(records, fraction: float, task: str = "main", horizon: int | None = None,
                         normalizer=None):
    """One example per record with ``n = max(1, floor(fraction * |S_p|))``.

    Records where that leaves nothing to predict are skipped; returns
    ``(examples, skipped)``.
    """
    if not 0 < fraction < 1:
        raise ContractError(f"observation fraction must lie in (0, 1), got {fraction}")
    out, skipped = [], 0
    for rec in records:
        n = observation_count(len(rec), fraction)
        if n >= len(rec):
            skipped += 1
            continue
        l = len(rec) - n if horizon is None else min(horizon, len(rec) - n)
        lo, hi = (normalizer.t_min, normalizer.t_max) if normalizer else (0.0, 1.0)
        out.append(make_example(rec, n, l, task, t_min=lo, t_max=hi))
    return out, skipped


# ---------------------------------------------------------------- normalisation


@dataclass(frozen=True)
class Normalizer:
    t_min: float
    t_max: float

    def __post_init__(self):
        if not (np.isfinite(self.t_min) and np.isfinite(self.t_max)) or self.t_max <= self.t_min:
            raise NormalizationError(f"degenerate time span [{self.t_min}, {self.t_max}]")

    @property
    def span(self) -> float:
        return self.t_max - self.t_min

    @classmethod
    def fit(cls, records) -> "Normalizer":
        chunks = []
        for rec in records:
            chunks += [rec.times, rec.assignee_events, rec.inventor_events]
        allt = np.concatenate(chunks) if chunks else np.zeros(0)
        if allt.size == 0:
            raise NormalizationError("no timestamps to fit normalisation constants on")
        return cls(float(allt.min()), float(allt.max()))

    def __call__(self, t):
        return (np.asarray(t, dtype=np.float64) - self.t_min) / self.span

    def inverse(self, u):
        return np.asarray(u, dtype=np.float64) * self.span + self.t_min

    def scale_gap(self, gap):
        return np.asarray(gap, dtype=np.float64) / self.span

    def unscale_gap(self, gap):
        return np.asarray(gap, dtype=np.float64) * self.span

    def apply(self, record: SequenceRecord) -> SequenceRecord:
        events = [CitationEvent(float(self(e.time)), e.main_cat, e.sub_cat) for e in record.events]
        return SequenceRecord(record.patent_id, events, self(record.assignee_events), self(record.inventor_events))


def normalize_times(train_records, *other_splits):
    """Fit constants on ``train_records`` only and map every split through them.

    Returns ``(normalized train, [normalized other splits...], normalizer)``.
    Times outside the training span are mapped but never clipped.
    """
    norm = Normalizer.fit(train_records)
    train = [norm.apply(r) for r in train_records]
    others = [[norm.apply(r) for r in split] for split in other_splits]
    return train, others, norm


# ---------------------------------------------------------------- splitting & batching


def split_records(items, train_fraction: float = 0.8, seed: int = 0):
    """Seeded shuffle then split; returns ``(train, test)``."""
    if not 0 < train_fraction < 1:
        raise ContractError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    items = list(items)
    order = np.random.default_rng(seed).permutation(len(items))
    cut = int(round(train_fraction * len(items)))
    return [items[i] for i in order[:cut]], [items[i] for i in order[cut:]]


def batches(examples, batch_size: int, seed: int | None = None, dtype=np.float32):
    """Padded batches in seeded-shuffle order (input order when ``seed`` is None)."""
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    examples = list(examples)
    order = np.arange(len(examples)) if seed is None else np.random.default_rng(seed).permutation(len(examples))
    return [collate([examples[i] for i in order[k:k + batch_size]], dtype)
            for k in range(0, len(examples), batch_size)]


def split_and_batch(dataset, train_fraction: float = 0.8, batch_size: int = 32, seed: int = 0,
                    dtype=np.float32):
    """Seeded split of examples, training part cut into padded batches; returns ``(batches, test)``."""
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    train, test = split_records(dataset, train_fraction, seed)
    return batches(train, batch_size, seed, dtype), test


@dataclass
class Batch:
    """Right-padded arrays for a group of examples; masks are True on real entries."""

    patent_ids: list
    patent_gaps: np.ndarray
    patent_cats: np.ndarray
    patent_mask: np.ndarray
    assignee_gaps: np.ndarray
    assignee_mask: np.ndarray
    assignee_empty: np.ndarray
    inventor_gaps: np.ndarray
    inventor_mask: np.ndarray
    inventor_empty: np.ndarray
    last_gap: np.ndarray
    last_cat: np.ndarray
    last_time: np.ndarray
    target_gaps: np.ndarray
    target_cats: np.ndarray
    target_mask: np.ndarray
    target_times: np.ndarray

    def __len__(self):
        return len(self.patent_ids)

    @property
    def lengths(self) -> np.ndarray:
        return self.patent_mask.sum(axis=1)


def _pad(rows, dtype, min_width=1):
    width = max([len(r) for r in rows] + [min_width])
    out = np.zeros((len(rows), width), dtype=dtype)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
        mask[i, :len(r)] = True
    return out, mask


def collate(examples, dtype=np.float32) -> Batch:
    if not examples:
        raise ContractError("cannot collate an empty list of examples")
    p_gaps, p_mask = _pad([ex.gaps for ex in examples], dtype)
    p_cats, _ = _pad([ex.cats for ex in examples], np.int64)
    a_gaps, a_mask = _pad([event_gaps(ex.assignee) for ex in examples], dtype)
    v_gaps, v_mask = _pad([event_gaps(ex.inventor) for ex in examples], dtype)
    width = max(ex.l for ex in examples)
    t_gaps = np.zeros((len(examples), width), dtype=dtype)
    t_cats = np.zeros((len(examples), width), dtype=np.int64)
    t_times = np.zeros((len(examples), width), dtype=np.float64)
    t_mask = np.zeros((len(examples), width), dtype=bool)
    for i, ex in enumerate(examples):
        t_gaps[i, :ex.l] = ex.target_gaps
        t_cats[i, :ex.l] = ex.target_cats
        t_times[i, :ex.l] = ex.target_times
        t_mask[i, :ex.l] = True
    return Batch(
        patent_ids=[ex.patent_id for ex in examples],
        patent_gaps=p_gaps, patent_cats=p_cats, patent_mask=p_mask,
        assignee_gaps=a_gaps, assignee_mask=a_mask, assignee_empty=~a_mask.any(axis=1),
        inventor_gaps=v_gaps, inventor_mask=v_mask, inventor_empty=~v_mask.any(axis=1),
        last_gap=np.array([ex.gaps[-1] for ex in examples], dtype=dtype),
        last_cat=np.array([ex.cats[-1] for ex in examples], dtype=np.int64),
        last_time=np.array([ex.times[-1] for ex in examples], dtype=np.float64),
        target_gaps=t_gaps, target_cats=t_cats, target_mask=t_mask, target_times=t_times,
    )


# ---------------------------------------------------------------- dataset checks


def validate_dataset(examples, min_len: int = 20, max_len: int = 200) -> int:
    for ex in examples:
        ex.validate(min_len, max_len)
    return len(examples)


def dataset_digest(records) -> str:
    """SHA-256 over the canonical JSON of every record, in order."""
    import json

    h = hashlib.sha256()
    for rec in records:
        h.update(json.dumps(rec.to_json(), sort_keys=True).encode())
    return h.hexdigest()


def with_targets(example: TrainingExample, l: int) -> TrainingExample:
    return replace(example, target_times=example.target_times[:l], target_cats=example.target_cats[:l])


__all__ = [
    "AUX_LIMIT", "Batch", "Normalizer", "OrderingError", "TrainingExample", "aux_window", "batches",
    "collate", "dataset_digest", "event_gaps", "examples_at_fraction", "make_example", "normalize_times",
    "observation_count", "split_and_batch", "split_records", "validate_dataset", "with_targets",
]
