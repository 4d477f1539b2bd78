import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from copp.ingest import (
    CounterStore,
    MarginCounters,
    OffGridMarginError,
    TransactionRecord,
    estimate_concurrence,
    estimate_impression_rate,
    format_log,
    load_counters,
    parse_log,
    read_log,
    update_counters,
    write_log,
)

GRID = (0.1, 0.3, 0.5, 0.7, 0.9)


def rec(round_, product, margin, n, v, context="none", leader=None):
    return TransactionRecord(round_, product, margin, n, v, context, leader)


def test_single_update():
    c = update_counters(MarginCounters(GRID), rec(0, "a", 0.1, 100, 30))
    assert c.impressions[0] == 100 and c.sales[0] == 30
    assert c.empirical_demand[0] == pytest.approx(0.3)


def test_updates_are_additive():
    c = MarginCounters(GRID)
    c = update_counters(c, rec(0, "a", 0.5, 50, 10))
    c = update_counters(c, rec(1, "a", 0.5, 50, 20))
    assert c.empirical_demand[2] == pytest.approx(0.3)


def test_null_update_is_noop():
    c = MarginCounters(GRID)
    assert update_counters(c, rec(0, "a", 0.3, 0, 0)) == c


def test_update_does_not_mutate():
    c = MarginCounters(GRID)
    update_counters(c, rec(0, "a", 0.3, 5, 1))
    assert c.impressions.sum() == 0


def test_off_grid_margin():
    with pytest.raises(OffGridMarginError):
        update_counters(MarginCounters(GRID), rec(0, "a", 0.2, 5, 1))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(impressions=5, sales=6),
        dict(impressions=-1, sales=0),
        dict(context="with"),
        dict(context="none", leader="b"),
        dict(context="sideways", leader="b"),
    ],
)
def test_record_validation(kwargs):
    base = dict(round=0, product="a", margin=0.1, impressions=5, sales=1)
    base.update(kwargs)
    with pytest.raises(ValueError):
        TransactionRecord(**base)


def test_concurrence_degenerate():
    hist = [rec(0, "f", 0.1, 40, 10, "with", "l")]
    assert estimate_concurrence(hist, "l", "f").p_hat == 1.0


def test_concurrence_ratio():
    hist = [rec(0, "f", 0.1, 30, 10, "with", "l"), rec(0, "f", 0.1, 70, 10, "without", "l")]
    est = estimate_concurrence(hist, "l", "f")
    assert est.p_hat == pytest.approx(0.3) and est.support == 100


def test_concurrence_prior():
    est = estimate_concurrence([], "l", "f")
    assert est.p_hat == 0.5 and est.support == 0


def test_concurrence_ignores_other_leaders():
    hist = [rec(0, "f", 0.1, 30, 10, "with", "l"), rec(0, "f", 0.1, 70, 10, "without", "x")]
    assert estimate_concurrence(hist, "l", "f").p_hat == 1.0


@pytest.mark.parametrize("imps, expected", [((100, 100), 100), ((50, 150), 100), ((), 0)])
def test_impression_rate(imps, expected):
    hist = [rec(r + 1, "a", 0.1, n, 0) for r, n in enumerate(imps)]
    assert estimate_impression_rate(hist, "a").n_hat == expected


@given(st.lists(st.tuples(st.integers(0, 20), st.sampled_from(GRID), st.integers(0, 50), st.floats(0, 1))))
def test_counters_monotone_and_consistent(rows):
    c = MarginCounters(GRID)
    for r, m, n, f in rows:
        new = update_counters(c, rec(r, "a", m, n, int(n * f)))
        assert np.all(new.impressions >= c.impressions)
        assert np.all(new.sales >= c.sales)
        assert np.all(new.sales <= new.impressions)
        c = new


def _store_records():
    return [
        rec(0, "a", 0.1, 100, 40),
        rec(0, "b", 0.5, 100, 30),
        rec(0, "b", 0.5, 40, 20, "with", "a"),
        rec(0, "b", 0.5, 5, 1, "without", "a"),
        rec(1, "a", 0.3, 100, 35),
        rec(1, "b", 0.5, 100, 28),
        rec(1, "b", 0.5, 35, 15, "with", "a"),
    ]


def test_store_decomposition():
    s = CounterStore(GRID, ("a", "b"), tracked=None)
    s.ingest_many(_store_records())
    assert s.with_counters("b", "a").impressions[2] == 75
    assert s.not_with_counters("b", "a").impressions[2] == 125
    assert s.none_counters("b", "a").impressions[2] == 120
    assert s.concurrence("a", "b").p_hat == pytest.approx(75 / 80)
    assert s.impression_rate("b").n_hat == 100


def test_store_ignores_untracked_pairs():
    s = CounterStore(GRID, ("a", "b"), tracked=set())
    s.ingest_many(_store_records())
    assert not s.has_pair("b", "a")
    s.track([("b", "a")])
    s.ingest(rec(2, "b", 0.5, 10, 3, "with", "a"))
    assert s.has_pair("b", "a")


def test_store_rejects_unknown_product():
    s = CounterStore(GRID, ("a",))
    with pytest.raises(KeyError):
        s.ingest(rec(0, "z", 0.1, 1, 0))


def test_store_flags_inconsistent_tallies():
    s = CounterStore(GRID, ("a", "b"), tracked=None)
    s.ingest(rec(0, "b", 0.5, 10, 5))
    s.ingest(rec(0, "b", 0.5, 20, 5, "with", "a"))
    with pytest.raises(ValueError):
        s.none_counters("b", "a")


def test_split_batches_equal_one_batch():
    recs = _store_records()
    one = CounterStore(GRID, ("a", "b"), tracked=None)
    one.ingest_many(recs)
    two = CounterStore(GRID, ("a", "b"), tracked=None)
    two.ingest_many(recs[:3])
    two.ingest_many(recs[3:])
    for p in ("a", "b"):
        assert one.unconditional[p] == two.unconditional[p]
    assert one.with_counters("b", "a") == two.with_counters("b", "a")


def test_log_round_trip(tmp_path):
    recs = _store_records()
    path = tmp_path / "log.csv"
    write_log(recs, path)
    text = path.read_bytes()
    assert text.startswith(b"round,product,margin,impressions,sales,context,leader\n")
    assert b"\r" not in text
    assert read_log(path, GRID) == recs


def test_log_bad_header():
    with pytest.raises(ValueError, match="header"):
        parse_log("a,b,c\n1,2,3\n")


def test_log_integer_ids_round_trip():
    recs = [rec(3, 7, 0.9, 10, 2), rec(3, 8, 0.9, 4, 1, "with", 7)]
    assert parse_log(format_log(recs)) == recs


def test_load_counters(tmp_path):
    path = tmp_path / "log.csv"
    write_log(_store_records(), path)
    store = load_counters(path, GRID, ("a", "b"))
    assert store.unconditional["a"].impressions.tolist() == [100, 100, 0, 0, 0]
