"""Sequence records, examples, normalisation, splitting and batching."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pcrnn.data import (CitationEvent, Normalizer, SequenceRecord, batches, collate, dataset_digest,
                        event_gaps, examples_at_fraction, make_example, normalize_times, observation_count,
                        read_sequences, split_and_batch, split_records, validate_dataset, write_sequences)
from pcrnn.data.dataset import aux_window, with_targets
from pcrnn.errors import ContractError, NormalizationError, OrderingError, SchemaError


def record(times, pid="P1", cats=None, assignee=(), inventor=()):
    cats = cats if cats is not None else [i % 7 for i in range(len(times))]
    events = [CitationEvent(float(t), c, c * 5) for t, c in zip(times, cats)]
    return SequenceRecord(pid, events, list(assignee), list(inventor))


class TestRecords:
    def test_round_trip(self, tmp_path, synthetic_records):
        path = tmp_path / "seq.jsonl"
        write_sequences(path, synthetic_records, {"source": "test"})
        back = read_sequences(path)
        assert dataset_digest(back) == dataset_digest(synthetic_records)
        header = path.read_text().splitlines()[0]
        assert '"format": "pcrnn-sequences"' in header and '"source": "test"' in header

    def test_wrong_header(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"format": "pcrnn-sequences", "version": 99}\n')
        with pytest.raises(SchemaError):
            read_sequences(path)

    def test_missing_field(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"patent_id": "x"}\n')
        with pytest.raises(SchemaError, match="events"):
            read_sequences(path)

    def test_validate(self):
        record(np.arange(20.0)).validate()
        with pytest.raises(OrderingError):
            record(np.arange(19.0)).validate()
        with pytest.raises(OrderingError):
            record(np.arange(201.0)).validate()
        with pytest.raises(OrderingError):
            record(np.r_[np.arange(19.0), 3.0]).validate()
        with pytest.raises(SchemaError):
            record(np.arange(20.0), cats=[7] * 20).validate()

    def test_digest_depends_on_content(self):
        a = [record(np.arange(20.0))]
        b = [record(np.arange(20.0) + 1)]
        assert dataset_digest(a) == dataset_digest([record(np.arange(20.0))])
        assert dataset_digest(a) != dataset_digest(b)


class TestExamples:
    def test_gaps(self):
        np.testing.assert_array_equal(event_gaps([2.0, 3.0, 5.5]), [0.0, 1.0, 2.5])

    def test_split_at_n(self):
        rec = record(np.arange(10.0), assignee=[-1.0, 2.0, 3.0, 4.5], inventor=[3.0])
        ex = make_example(rec, 4, 3)
        np.testing.assert_array_equal(ex.times, [0, 1, 2, 3])
        np.testing.assert_array_equal(ex.target_times, [4, 5, 6])
        np.testing.assert_array_equal(ex.target_gaps, [1, 1, 1])
        np.testing.assert_array_equal(ex.assignee, [-1.0, 2.0])
        assert ex.inventor.size == 0
        assert make_example(rec, 4).l == 6

    def test_aux_window_keeps_most_recent(self):
        np.testing.assert_array_equal(aux_window(np.arange(10.0), 8.0, limit=3), [5.0, 6.0, 7.0])

    def test_bad_counts(self):
        rec = record(np.arange(5.0))
        with pytest.raises(ContractError):
            make_example(rec, 0)
        with pytest.raises(ContractError):
            make_example(rec, 3, 3)

    def test_observation_count(self):
        assert observation_count(20, 0.1) == 2
        assert observation_count(20, 0.8) == 16
        assert observation_count(5, 0.1) == 1

    def test_length_twenty_at_tenth(self):
        (ex,), skipped = examples_at_fraction([record(np.arange(20.0))], 0.1)
        assert (ex.n, ex.l, skipped) == (2, 18, 0)

    def test_horizon_cap(self):
        (ex,), _ = examples_at_fraction([record(np.arange(20.0))], 0.5, horizon=3)
        assert (ex.n, ex.l) == (10, 3)
        assert with_targets(ex, 1).l == 1

    def test_subcategory_task(self):
        (ex,), _ = examples_at_fraction([record(np.arange(20.0))], 0.5, task="sub")
        assert ex.cats.max() <= 36 and ex.cats[3] == 15

    def test_fraction_bounds(self):
        with pytest.raises(ContractError):
            examples_at_fraction([], 1.0)

    def test_validation_pass(self, normalized_records):
        train, _ = normalized_records
        for fraction in (0.8, 0.5, 0.3, 0.1):
            examples, _ = examples_at_fraction(train, fraction)
            assert validate_dataset(examples) == len(examples)

    def test_validation_catches_cutoff(self):
        ex = make_example(record(np.arange(20.0), assignee=[1.0]), 5)
        ex.assignee = np.array([1.0, 9.0])
        with pytest.raises(ContractError):
            validate_dataset([ex])


class TestNormalizer:
    @given(st.floats(-1e6, 1e6), st.floats(1e-3, 1e6), st.lists(st.floats(-1e7, 1e7), min_size=1, max_size=20))
    def test_round_trip(self, lo, span, values):
        norm = Normalizer(lo, lo + span)
        np.testing.assert_allclose(norm.inverse(norm(values)), values, rtol=1e-9, atol=1e-6 * (1 + abs(lo) + span))

    def test_degenerate_span(self):
        with pytest.raises(NormalizationError):
            Normalizer(3.0, 3.0)
        with pytest.raises(NormalizationError):
            Normalizer.fit([record([5.0])])

    def test_fitted_on_training_split_only(self):
        train = [record(np.linspace(0, 10, 20))]
        test = [record(np.linspace(-5, 20, 20))]
        train_n, (test_n,), norm = normalize_times(train, test)
        assert (norm.t_min, norm.t_max) == (0.0, 10.0)
        assert train_n[0].times.min() == 0.0 and train_n[0].times.max() == 1.0
        # out-of-span test times are mapped, not clipped
        assert test_n[0].times.min() == -0.5 and test_n[0].times.max() == 2.0

    def test_gap_scaling(self):
        norm = Normalizer(10.0, 30.0)
        assert norm.scale_gap(5.0) == 0.25
        assert norm.unscale_gap(0.25) == 5.0


class TestSplitAndBatch:
    def test_paper_proportions(self):
        train, test = split_records(range(15_000), 0.8, seed=0)
        assert (len(train), len(test)) == (12_000, 3_000)
        assert sorted(train + test) == list(range(15_000))

    def test_same_seed_same_split(self):
        assert split_records(range(50), seed=3) == split_records(range(50), seed=3)
        assert split_records(range(50), seed=3) != split_records(range(50), seed=4)

    def test_bad_fraction(self):
        with pytest.raises(ContractError):
            split_records(range(5), 1.0)

    def test_batch_size_checked(self):
        with pytest.raises(ContractError):
            batches([], 0)
        with pytest.raises(ContractError):
            split_and_batch([], batch_size=0)

    def test_same_seed_same_batches(self, normalized_records):
        examples, _ = examples_at_fraction(normalized_records[0], 0.5)
        a = [b.patent_ids for b in batches(examples, 5, seed=2)]
        assert a == [b.patent_ids for b in batches(examples, 5, seed=2)]
        assert sorted(sum(a, [])) == sorted(ex.patent_id for ex in examples)

    def test_masks_cover_true_lengths(self, normalized_records):
        examples, _ = examples_at_fraction(normalized_records[0], 0.3)
        batch = collate(examples[:5])
        np.testing.assert_array_equal(batch.lengths, [ex.n for ex in examples[:5]])
        np.testing.assert_array_equal(batch.target_mask.sum(axis=1), [ex.l for ex in examples[:5]])
        np.testing.assert_array_equal(batch.assignee_mask.sum(axis=1), [ex.assignee.size for ex in examples[:5]])
        assert np.all(batch.patent_gaps[~batch.patent_mask] == 0)
        assert np.all(batch.target_gaps[~batch.target_mask] == 0)

    def test_empty_aux_flagged(self):
        ex = make_example(record(np.arange(20.0)), 5)
        batch = collate([ex])
        assert batch.assignee_empty.tolist() == [True]
        assert batch.assignee_gaps.shape == (1, 1)

    def test_collate_empty(self):
        with pytest.raises(ContractError):
            collate([])
