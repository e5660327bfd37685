"""Citation records and the line-delimited sequence file shared by real and synthetic data."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import OrderingError, SchemaError

SEQUENCE_FORMAT = "pcrnn-sequences"
SEQUENCE_VERSION = 1
MAIN_VOCAB = 7
SUB_VOCAB = 37


@dataclass(frozen=True)
class CitationEvent:
    time: float
    main_cat: int | None = None
    sub_cat: int | None = None

    def category(self, task: str = "main") -> int | None:
        return self.main_cat if task == "main" else self.sub_cat


@dataclass
class SequenceRecord:
    """One patent: its forward citations plus the assignee and inventor chains."""

    patent_id: str
    events: list
    assignee_events: np.ndarray = field(default_factory=lambda: np.zeros(0))
    inventor_events: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.assignee_events = np.asarray(self.assignee_events, dtype=np.float64).reshape(-1)
        self.inventor_events = np.asarray(self.inventor_events, dtype=np.float64).reshape(-1)

    def __len__(self):
        return len(self.events)

    @property
    def times(self) -> np.ndarray:
        return np.array([e.time for e in self.events], dtype=np.float64)

    def categories(self, task: str = "main") -> np.ndarray:
        return np.array([e.category(task) for e in self.events], dtype=np.int64)

    def validate(self, min_len: int = 20, max_len: int = 200):
        """Raise if the record breaks ordering or length rules."""
        check_sorted(self.times, f"patent {self.patent_id} citations")
        check_sorted(self.assignee_events, f"patent {self.patent_id} assignee chain")
        check_sorted(self.inventor_events, f"patent {self.patent_id} inventor chain")
        if not min_len <= len(self.events) <= max_len:
            raise OrderingError(f"patent {self.patent_id}: chain length {len(self.events)} outside [{min_len}, {max_len}]")
        for e in self.events:
            if e.main_cat is None or not 0 <= e.main_cat < MAIN_VOCAB:
                raise SchemaError(f"patent {self.patent_id}: main category {e.main_cat} outside 0..{MAIN_VOCAB - 1}")
            if e.sub_cat is not None and not 0 <= e.sub_cat < SUB_VOCAB:
                raise SchemaError(f"patent {self.patent_id}: sub category {e.sub_cat} outside 0..{SUB_VOCAB - 1}")

    def to_json(self) -> dict:
        return {
            "patent_id": self.patent_id,
            "events": [{"t": e.time, "main_cat": e.main_cat, "sub_cat": e.sub_cat} for e in self.events],
            "assignee_events": self.assignee_events.tolist(),
            "inventor_events": self.inventor_events.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SequenceRecord":
        try:
            events = [CitationEvent(float(e["t"]), e.get("main_cat"), e.get("sub_cat")) for e in obj["events"]]
            return cls(str(obj["patent_id"]), events,
                       obj.get("assignee_events", []), obj.get("inventor_events", []))
        except KeyError as exc:
            raise SchemaError(f"sequence record missing field {exc.args[0]!r}") from exc


def check_sorted(times, what: str):
    times = np.asarray(times)
    if times.size > 1 and np.any(np.diff(times) < 0):
        k = int(np.argmax(np.diff(times) < 0))
        raise OrderingError(f"{what} not time-sorted at position {k + 1}")


def write_sequences(path, records, meta: dict | None = None):
    """Write a header line then one JSON object per record."""
    header = {"format": SEQUENCE_FORMAT, "version": SEQUENCE_VERSION, "time_unit": "days"}
    header.update(meta or {})
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for rec in records:
            fh.write(json.dumps(rec.to_json()) + "\n")


def read_sequences(path) -> list:
    records = []
    with open(Path(path), encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "format" in obj:
                if obj["format"] != SEQUENCE_FORMAT or obj.get("version") != SEQUENCE_VERSION:
                    raise SchemaError(f"unsupported sequence file header {obj}")
                continue
            records.append(SequenceRecord.from_json(obj))
    return records
