from .dataset import (
    Batch,
    Normalizer,
    TrainingExample,
    batches,
    collate,
    dataset_digest,
    event_gaps,
    examples_at_fraction,
    make_example,
    normalize_times,
    observation_count,
    split_and_batch,
    split_records,
    validate_dataset,
)
from .events import (
    MAIN_VOCAB,
    SUB_VOCAB,
    CitationEvent,
    SequenceRecord,
    read_sequences,
    write_sequences,
)
from .hawkes import SyntheticConfig, hawkes_times, simulate_dataset, simulate_hawkes
from .patentsview import ColumnConfig, IngestConfig, IngestResult, ingest_patentsview

__all__ = [
    "Batch", "CitationEvent", "ColumnConfig", "IngestConfig", "IngestResult", "MAIN_VOCAB", "Normalizer",
    "SUB_VOCAB", "SequenceRecord", "SyntheticConfig", "TrainingExample", "batches", "collate",
    "dataset_digest", "event_gaps", "examples_at_fraction", "hawkes_times", "ingest_patentsview",
    "make_example", "normalize_times", "observation_count", "read_sequences", "simulate_dataset",
    "simulate_hawkes", "split_and_batch", "split_records", "validate_dataset", "write_sequences",
]
