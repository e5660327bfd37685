"""Forecast metrics, the naive yardstick, and the observation-window sweep."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data.dataset import batches, examples_at_fraction
from .errors import ContractError, SchemaError

SWEEP_FRACTIONS = (0.8, 0.5, 0.3, 0.1)
REPORT_FORMAT = "pcrnn-sweep-report"
REPORT_VERSION = 1


def _pair(pred, true, what):
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape:
        raise ContractError(f"{what}: {pred.shape} predictions vs {true.shape} targets")
    if pred.size == 0:
        raise ContractError(f"{what}: nothing to score")
    return pred, true


def mae(pred, true) -> float:
    pred, true = _pair(pred, true, "mae")
    return float(np.mean(np.abs(pred.astype(np.float64) - true)))


def accuracy(pred, true) -> float:
    pred, true = _pair(pred, true, "accuracy")
    return float(np.mean(pred == true))


def naive_baseline(example, l: int | None = None):
    """Mean observed gap and majority observed category (lowest id on ties), repeated ``l`` times.

    Returns ``(gaps, categories)`` arrays of length ``l``.
    """
    l = example.l if l is None else l
    times = np.asarray(example.times, dtype=np.float64)
    gap = float(np.mean(np.diff(times))) if times.size >= 2 else 0.0
    counts = np.bincount(np.asarray(example.cats, dtype=np.int64))
    return np.full(l, gap), np.full(l, int(np.argmax(counts)), dtype=np.int64)


@dataclass
class ScoredEvents:
    """Flat per-event predictions plus the sequence each event belongs to."""

    pred_gaps: list = field(default_factory=list)
    true_gaps: list = field(default_factory=list)
    pred_times: list = field(default_factory=list)
    true_times: list = field(default_factory=list)
    pred_cats: list = field(default_factory=list)
    true_cats: list = field(default_factory=list)
    seq: list = field(default_factory=list)

    def add(self, seq_id, pred_gaps, true_gaps, start, true_times, pred_cats, true_cats):
        k = len(true_gaps)
        self.pred_gaps.append(np.asarray(pred_gaps[:k], dtype=np.float64))
        self.true_gaps.append(np.asarray(true_gaps, dtype=np.float64))
        self.pred_times.append(start + np.cumsum(self.pred_gaps[-1]))
        self.true_times.append(np.asarray(true_times, dtype=np.float64))
        self.pred_cats.append(np.asarray(pred_cats[:k]))
        self.true_cats.append(np.asarray(true_cats))
        self.seq.append(np.full(k, seq_id))

    def metrics(self) -> dict:
        cat = {name: np.concatenate(getattr(self, name)) for name in
               ("pred_gaps", "true_gaps", "pred_times", "true_times", "pred_cats", "true_cats", "seq")}
        per_seq = {"acc": [], "gap_mae": [], "abs_mae": []}
        for pg, tg, pt, tt, pc, tc in zip(self.pred_gaps, self.true_gaps, self.pred_times,
                                          self.true_times, self.pred_cats, self.true_cats):
            per_seq["acc"].append(accuracy(pc, tc))
            per_seq["gap_mae"].append(mae(pg, tg))
            per_seq["abs_mae"].append(mae(pt, tt))
        return {
            "acc": accuracy(cat["pred_cats"], cat["true_cats"]),
            "gap_mae": mae(cat["pred_gaps"], cat["true_gaps"]),
            "abs_mae": mae(cat["pred_times"], cat["true_times"]),
            "seq_acc": float(np.mean(per_seq["acc"])),
            "seq_gap_mae": float(np.mean(per_seq["gap_mae"])),
            "seq_abs_mae": float(np.mean(per_seq["abs_mae"])),
            "events": int(cat["true_gaps"].size),
            "sequences": len(self.true_gaps),
        }


def score_model(model, examples, mode: str = "free_running", batch_size: int = 64) -> dict:
    """Event-level and per-sequence metrics of ``model`` on ``examples``."""
    scored = ScoredEvents()
    for i, batch in enumerate(batches(examples, batch_size, None, model.config.np_dtype)):
        fc = model.forecast_batch(batch, batch.target_gaps.shape[1], mode)
        cats = fc.categories
        for r in range(len(batch)):
            k = int(batch.target_mask[r].sum())
            scored.add(f"{i}:{r}", fc.gaps[r], batch.target_gaps[r, :k], batch.last_time[r],
                       batch.target_times[r, :k], cats[r], batch.target_cats[r, :k])
    return scored.metrics()


def score_baseline(examples) -> dict:
    scored = ScoredEvents()
    for i, ex in enumerate(examples):
        gaps, cats = naive_baseline(ex)
        scored.add(i, gaps, ex.target_gaps, ex.times[-1], ex.target_times, cats, ex.target_cats)
    return scored.metrics()


def majority_rate(examples) -> float:
    """Share of target events carrying the most common target category."""
    cats = np.concatenate([np.asarray(ex.target_cats, dtype=np.int64) for ex in examples])
    return float(np.bincount(cats).max() / cats.size)


@dataclass
class SweepRow:
    task: str
    fraction: float
    acc: float
    gap_mae: float
    abs_mae: float
    seq_acc: float
    seq_gap_mae: float
    seq_abs_mae: float
    events: int
    sequences: int
    skipped: int
    baseline_acc: float
    baseline_gap_mae: float

    def check(self):
        if not 0 <= self.acc <= 1 or not 0 <= self.baseline_acc <= 1:
            raise ContractError(f"accuracy outside [0, 1] in row {self}")
        if min(self.gap_mae, self.abs_mae, self.baseline_gap_mae) < 0:
            raise ContractError(f"negative MAE in row {self}")


@dataclass
class SweepReport:
    rows: list

    def row(self, task, fraction) -> SweepRow:
        for r in self.rows:
            if r.task == task and np.isclose(r.fraction, fraction):
                return r
        raise KeyError((task, fraction))

    def to_csv(self, path):
        names = [f.name for f in fields(SweepRow)]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            for r in self.rows:
                writer.writerow([repr(v) if isinstance(v, float) else v for v in astuple_row(r)])

    def to_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"format": REPORT_FORMAT, "version": REPORT_VERSION}) + "\n")
            for r in self.rows:
                fh.write(json.dumps(asdict(r)) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "SweepReport":
        rows = []
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            if header.get("format") != REPORT_FORMAT or header.get("version") != REPORT_VERSION:
                raise SchemaError(f"unsupported report header {header}")
            for line in fh:
                if line.strip():
                    rows.append(SweepRow(**json.loads(line)))
        return cls(rows)

    @classmethod
    def from_csv(cls, path) -> "SweepReport":
        types = {f.name: f.type for f in fields(SweepRow)}
        cast = {"str": str, "float": float, "int": int}
        with open(path, newline="") as fh:
            return cls([SweepRow(**{k: cast[types[k]](v) for k, v in r.items()}) for r in csv.DictReader(fh)])


def astuple_row(row: SweepRow):
    return [getattr(row, f.name) for f in fields(SweepRow)]


def run_observation_sweep(models: dict, records, fractions=SWEEP_FRACTIONS, l_policy=None,
                          batch_size: int = 64) -> SweepReport:
    """Free-running forecasts at each observation fraction, for each task's model.

    ``models`` maps a task name (``"main"``/``"sub"``) to a trained model;
    ``records`` are time-normalised test records.  Per record
    ``n = max(1, floor(fraction * |S_p|))`` and ``l = |S_p| - n`` unless
    ``l_policy`` caps it.
    """
    rows = []
    for task, model in models.items():
        for fraction in fractions:
            examples, skipped = examples_at_fraction(records, fraction, task, l_policy)
            if not examples:
                raise ContractError(f"no evaluable records at fraction {fraction}")
            m = score_model(model, examples, "free_running", batch_size)
            b = score_baseline(examples)
            row = SweepRow(task, float(fraction), m["acc"], m["gap_mae"], m["abs_mae"], m["seq_acc"],
                           m["seq_gap_mae"], m["seq_abs_mae"], m["events"], m["sequences"], skipped,
                           b["acc"], b["gap_mae"])
            row.check()
            rows.append(row)
    return SweepReport(rows)
