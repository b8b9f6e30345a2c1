import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pvpbalance.data import (
    ADVANCED_SCHEMA,
    RPS_SCHEMA,
    CompositionEncoding,
    Dataset,
    MatchRecord,
    Schema,
    get_schema,
    kfold_split,
    load_csv,
    save_csv,
    swap_arrays,
    swap_augment,
)
from pvpbalance.errors import ParseError, SchemaError, SizeError

ROCK = CompositionEncoding((1.0, 0.0, 0.0), "rps")
PAPER = CompositionEncoding((0.0, 1.0, 0.0), "rps")

outcomes = st.sampled_from([0.0, 0.5, 1.0])


def small_dataset(n, rng=None):
    rng = rng or np.random.default_rng(0)
    comps = np.eye(3)
    return Dataset(comps, rng.integers(3, size=n), rng.integers(3, size=n),
                   rng.choice([0.0, 0.5, 1.0], size=n), RPS_SCHEMA)


class TestSwap:
    def test_win_becomes_loss(self):
        assert swap_augment(MatchRecord(ROCK, PAPER, 1.0), True) == MatchRecord(PAPER, ROCK, 0.0)

    def test_tie_stays_tie(self):
        assert swap_augment(MatchRecord(ROCK, PAPER, 0.5), True) == MatchRecord(PAPER, ROCK, 0.5)

    def test_no_coin_is_identity(self):
        rec = MatchRecord(ROCK, PAPER, 0.3)
        assert swap_augment(rec, False) is rec

    @given(outcomes, st.booleans())
    def test_double_swap_is_identity(self, w, first):
        rec = MatchRecord(ROCK, PAPER, w)
        assert swap_augment(swap_augment(rec, first), first) == rec

    @given(outcomes)
    def test_complement(self, w):
        rec = MatchRecord(ROCK, PAPER, w)
        assert rec.outcome + swap_augment(rec, True).outcome == 1.0

    def test_vectorised_matches_records(self):
        a, b = np.array([0, 1, 2]), np.array([1, 2, 0])
        w = np.array([1.0, 0.5, 0.0])
        coins = np.array([True, False, True])
        sa, sb, sw = swap_arrays(a, b, w, coins)
        assert sa.tolist() == [1, 1, 0] and sb.tolist() == [0, 2, 2] and sw.tolist() == [0.0, 0.5, 1.0]


class TestSchema:
    def test_dimensions(self):
        assert get_schema("simple").dimension == 20
        assert get_schema("rps").dimension == 3
        assert get_schema("advanced").dimension == 23

    def test_text_round_trip(self):
        assert Schema.from_text(ADVANCED_SCHEMA.to_text()) == ADVANCED_SCHEMA

    def test_declared_dimension_must_match(self):
        with pytest.raises(SchemaError):
            Schema.from_text("segments = binary:4\ndimension = 5\n")

    def test_onehot_needs_exactly_one(self):
        with pytest.raises(SchemaError):
            RPS_SCHEMA.validate([[1, 1, 0]])
        with pytest.raises(SchemaError):
            RPS_SCHEMA.validate([[0, 0, 0]])

    def test_entries_in_unit_interval(self):
        with pytest.raises(SchemaError):
            get_schema("simple").validate([[2.0] + [0.0] * 19])


class TestKFold:
    def test_exact_division(self):
        splits = kfold_split(small_dataset(10), 5, 0)
        assert len(splits) == 5
        assert all(len(s.test) == 2 and len(s.train) == 8 for s in splits)

    def test_deterministic(self):
        d = small_dataset(50)
        s1, s2 = kfold_split(d, 5, 3), kfold_split(d, 5, 3)
        for x, y in zip(s1, s2):
            assert np.array_equal(x.test.a, y.test.a) and np.array_equal(x.test.outcome, y.test.outcome)

    def test_large_fold_sizes(self):
        d = small_dataset(100_000)
        assert [len(s.test) for s in kfold_split(d, 5, 1)] == [20_000] * 5

    def test_too_small(self):
        with pytest.raises(SizeError):
            kfold_split(small_dataset(3), 5, 0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(5, 200), st.integers(2, 7), st.integers(0, 10_000))
    def test_partition(self, n, k, seed):
        if n < k:
            return
        # the outcome column carries a unique tag per record
        ids = np.arange(n)
        d = Dataset(np.eye(3), ids % 3, (ids // 3) % 3, ids / n, RPS_SCHEMA)
        tests = []
        for s in kfold_split(d, k, seed):
            train_tags, test_tags = set(s.train.outcome.tolist()), set(s.test.outcome.tolist())
            assert not train_tags & test_tags
            assert len(train_tags) + len(test_tags) == n
            assert abs(len(s.test) - n / k) < 1
            tests += s.test.outcome.tolist()
        assert sorted(tests) == sorted((ids / n).tolist())


class TestCsv:
    def test_parse_rps_row(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("1,0,0, 0,1,0, 1.0\n")
        d = load_csv(p, RPS_SCHEMA)
        assert d.record(0) == MatchRecord(ROCK, PAPER, 1.0)

    def test_bad_outcome_reports_row(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("1,0,0,0,1,0,1\n1,0,0,0,1,0,0.7\n")
        with pytest.raises(ParseError, match="row 2"):
            load_csv(p, RPS_SCHEMA)

    def test_non_numeric(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("1,0,x,0,1,0,1\n")
        with pytest.raises(ParseError, match="row 1"):
            load_csv(p, RPS_SCHEMA)

    def test_wrong_width(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("1,0,0,0,1,1\n")
        with pytest.raises(SchemaError):
            load_csv(p, RPS_SCHEMA)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("")
        with pytest.raises(SchemaError):
            load_csv(p, RPS_SCHEMA)

    def test_header_and_round_trip(self, tmp_path):
        d = small_dataset(200)
        p = tmp_path / "m.csv"
        save_csv(d, p, header=True)
        back = load_csv(p, RPS_SCHEMA, header=True)
        assert list(back.records()) == list(d.records())

    def test_row_order_preserved(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("0,1,0,1,0,0,0\n1,0,0,0,0,1,0.5\n")
        recs = list(load_csv(p, RPS_SCHEMA).records())
        assert [r.outcome for r in recs] == [0.0, 0.5]
        assert recs[0].comp_a == PAPER


def test_from_records_dedupes():
    d = Dataset.from_records([MatchRecord(ROCK, PAPER, 1.0), MatchRecord(PAPER, ROCK, 0.0)], RPS_SCHEMA)
    assert d.n_comps == 2
    assert d.a.tolist() == [0, 1] and d.b.tolist() == [1, 0]


def test_observed_comps_threshold():
    d = Dataset(np.eye(3), np.array([0, 0, 1]), np.array([1, 0, 1]), np.ones(3) * 0.5, RPS_SCHEMA)
    assert d.observed_comps(1).tolist() == [0, 1]
    assert d.observed_comps(2).tolist() == [0, 1]
    assert d.observed_comps(3).tolist() == []
