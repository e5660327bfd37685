"""Build citation chains from PatentsView-style tab-separated bulk files.

Five tables are read: citations (citing -> cited), patents (grant date),
patent -> assignee, patent -> inventor, and patent -> NBER category.  Column
names come from :class:`ColumnConfig`; dates are grant dates converted to days
since 1970-01-01.
"""

from __future__ import annotations

import csv
import datetime as dt
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import SchemaError
from .events import MAIN_VOCAB, SUB_VOCAB, CitationEvent, SequenceRecord

EPOCH = dt.date(1970, 1, 1)


@dataclass
class ColumnConfig:
    citing: str = "patent_id"
    cited: str = "citation_id"
    patent_id: str = "id"
    grant_date: str = "date"
    assignee_patent: str = "patent_id"
    assignee_id: str = "assignee_id"
    inventor_patent: str = "patent_id"
    inventor_id: str = "inventor_id"
    category_patent: str = "patent_id"
    main_category: str = "category_id"
    sub_category: str = "subcategory_id"


@dataclass
class IngestConfig:
    columns: ColumnConfig = field(default_factory=ColumnConfig)
    category_table: str | None = None
    min_len: int = 20
    max_len: int = 200
    delimiter: str = "\t"

    @classmethod
    def from_dict(cls, data: dict) -> "IngestConfig":
        data = dict(data)
        columns = ColumnConfig(**data.pop("columns", {}))
        return cls(columns=columns, **data)


@dataclass
class IngestResult:
    records: list
    stats: dict


def parse_day(text: str) -> int:
    return (dt.date.fromisoformat(text.strip()[:10]) - EPOCH).days


def _id_key(pid: str):
    return (0, int(pid), "") if pid.isdigit() else (1, 0, pid)


def _rows(path, needed, delimiter):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        header = reader.fieldnames or []
        for col in needed:
            if col not in header:
                raise SchemaError(f"{Path(path).name}: missing column {col!r}")
        for row in reader:
            yield row


def load_category_table(path, delimiter="\t") -> dict:
    """Rows ``kind, code, id`` with kind ``main`` or ``sub``."""
    table = {"main": {}, "sub": {}}
    for row in _rows(path, ("kind", "code", "id"), delimiter):
        table[row["kind"].strip()][row["code"].strip()] = int(row["id"])
    return table


def _enumerate_codes(codes, limit, kind):
    ordered = sorted(set(codes), key=_id_key)
    if len(ordered) > limit:
        raise SchemaError(f"{len(ordered)} distinct {kind} categories exceed the vocabulary of {limit}")
    return {code: i for i, code in enumerate(ordered)}


def ingest_patentsview(citation_file, patent_file, assignee_map, inventor_map, category_map,
                       config: IngestConfig | None = None) -> IngestResult:
    cfg = config or IngestConfig()
    col = cfg.columns
    delim = cfg.delimiter
    stats = defaultdict(int)

    grant = {}
    for row in _rows(patent_file, (col.patent_id, col.grant_date), delim):
        try:
            grant[row[col.patent_id].strip()] = parse_day(row[col.grant_date])
        except (ValueError, AttributeError):
            stats["unparseable_dates"] += 1

    raw_cats = {}
    for row in _rows(category_map, (col.category_patent, col.main_category, col.sub_category), delim):
        raw_cats[row[col.category_patent].strip()] = (row[col.main_category].strip(), row[col.sub_category].strip())
    if cfg.category_table:
        table = load_category_table(cfg.category_table, delim)
        main_ids, sub_ids = table["main"], table["sub"]
    else:
        main_ids = _enumerate_codes([m for m, _ in raw_cats.values()], MAIN_VOCAB, "main")
        sub_ids = _enumerate_codes([s for _, s in raw_cats.values()], SUB_VOCAB, "sub")

    def category(pid):
        main, sub = raw_cats.get(pid, (None, None))
        if main not in main_ids or sub not in sub_ids:
            return None
        m, s = main_ids[main], sub_ids[sub]
        if not (0 <= m < MAIN_VOCAB and 0 <= s < SUB_VOCAB):
            raise SchemaError(f"category ids ({m}, {s}) for patent {pid} outside 0..6 / 0..36")
        return m, s

    citers = defaultdict(set)
    for row in _rows(citation_file, (col.citing, col.cited), delim):
        citers[row[col.cited].strip()].add(row[col.citing].strip())

    def timeline(cited_ids, count=False):
        """Citing patents of ``cited_ids``, each once, ordered by (grant day, citing id)."""
        seen = set()
        for pid in cited_ids:
            seen |= citers.get(pid, set())
        dated = [(grant[c], c) for c in seen if c in grant]
        if count:
            stats["undated_citations"] += len(seen) - len(dated)
        return sorted(dated, key=lambda x: (x[0], _id_key(x[1])))

    owners = {"assignee": defaultdict(set), "inventor": defaultdict(set)}
    holdings = {"assignee": defaultdict(set), "inventor": defaultdict(set)}
    for kind, path, pcol, ecol in (("assignee", assignee_map, col.assignee_patent, col.assignee_id),
                                   ("inventor", inventor_map, col.inventor_patent, col.inventor_id)):
        for row in _rows(path, (pcol, ecol), delim):
            pid, eid = row[pcol].strip(), row[ecol].strip()
            owners[kind][pid].add(eid)
            holdings[kind][eid].add(pid)

    chain_cache = {"assignee": {}, "inventor": {}}

    def entity_chain(kind, eid):
        cache = chain_cache[kind]
        if eid not in cache:
            cache[eid] = [float(t) for t, _ in timeline(sorted(holdings[kind][eid]))]
        return cache[eid]

    def longest(kind, pid):
        best = []
        for eid in sorted(owners[kind].get(pid, ()), key=_id_key):
            chain = entity_chain(kind, eid)
            if len(chain) > len(best):
                best = chain
        return best

    records = []
    for pid in sorted(citers, key=_id_key):
        events = []
        for day, citing in timeline([pid], count=True):
            cat = category(citing)
            if cat is None:
                stats["uncategorised_citations"] += 1
                continue
            events.append(CitationEvent(float(day), cat[0], cat[1]))
        if len(events) < cfg.min_len:
            stats["dropped_short"] += 1
            continue
        if len(events) > cfg.max_len:
            stats["dropped_long"] += 1
            continue
        records.append(SequenceRecord(pid, events, longest("assignee", pid), longest("inventor", pid)))
    stats["patents_kept"] = len(records)
    return IngestResult(records, dict(stats))
