from __future__ import annotations

import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clickjourney.aggregate import (
    JOURNEY_FEATURES,
    SESSION_FEATURES,
    GroupBy,
    JourneyAggregator,
    JourneyFeatures,
    SessionAggregator,
    SessionFeatures,
    TimeOfDay,
    aggregate_partitioned,
    build_journeys,
    calendar_fields,
    encode_matrix,
    exact_add,
    exact_value,
    read_records,
    sessionize,
    time_of_day,
    write_records,
)
from clickjourney.ingest import EventType, parse_timestamp

from conftest import ev, event_sets
from oracles import fields_equal, naive_journeys, naive_sessions, tod

V, C, R, P = EventType.VIEW, EventType.CART, EventType.REMOVE_FROM_CART, EventType.PURCHASE


@pytest.mark.parametrize("hour,expected", [(9, TimeOfDay.MORNING), (16, TimeOfDay.AFTERNOON), (7, TimeOfDay.EARLY_MORNING)])
def test_time_of_day_sample_hours(hour, expected):
    assert time_of_day(hour) is expected


def test_time_of_day_bins_cover_day():
    codes = [int(time_of_day(h)) for h in range(24)]
    assert codes == [tod(h) for h in range(24)]
    assert codes == sorted(codes)
    assert set(codes) == set(range(7))
    with pytest.raises(ValueError):
        time_of_day(24)


def test_calendar_fields_monday_zero():
    # 2019-12-02 was a Monday; 2019-12-01 a Sunday
    assert calendar_fields(parse_timestamp("2019-12-02 12:30:00 UTC")) == {
        "DayOfWeek": 0, "TimeOfDay": int(TimeOfDay.NOON), "Year": 2019, "Month": 12, "Weekend": 0}
    assert calendar_fields(parse_timestamp("2019-12-01 23:00:00 UTC"))["Weekend"] == 1


def test_single_view_session():
    (s,) = sessionize([ev(0)])
    assert (s.TotalEventsInSession, s.interactionTime, s.purchased) == (1, 0, 0)


def test_view_cart_purchase_session():
    (s,) = sessionize([ev(0, V, price=10), ev(60, C, price=10), ev(120, P, price=10)])
    assert s.TotalEventsInSession == 3
    assert s.interactionTime == 120
    assert s.NumTimesCartedInSession == 1
    assert s.AvgAmtCartedInSession == 10
    assert s.purchased == 1


def test_distinct_carted_brands():
    (s,) = sessionize([ev(0, C, brand="a"), ev(1, C, brand="b"), ev(2, C, brand="a"), ev(3, V, brand="c")])
    assert s.NumBrandsCartedInSession == 2
    assert s.NumBrandsViewedInSession == 1


def test_sample_journey_eight_views():
    # user 442482854 / product 1000978: eight views over four sessions
    stamps = ["2019-11-09 10:01:00", "2019-11-09 10:03:00", "2019-11-12 15:00:00", "2019-11-12 15:02:10",
              "2019-11-15 20:00:00", "2019-11-15 20:04:00", "2019-11-21 09:10:00", "2019-11-21 09:13:56"]
    prices = [300.91, 300.91, 359.47, 359.47, 330.0, 330.0, 359.47, 359.47]
    sessions = ["a", "a", "b", "b", "c", "c", "d", "d"]
    events = []
    for t, p, s in zip(stamps, prices, sessions):
        e = ev(0, V, product="1000978", price=p, user="442482854", session=s)
        events.append(type(e)(parse_timestamp(t + " UTC"), *[getattr(e, f) for f in type(e).__slots__[1:]]))
    (j,) = build_journeys(events)
    assert j.NumView == 8 and j.NumOfEventsInJourney == 8
    assert j.minPrice == 300.91 and j.maxPrice == 359.47
    assert j.NumSessions == 4
    assert j.TimeOfDay == TimeOfDay.MORNING and j.Month == 11 and j.Year == 2019
    assert j.purchased == 0


def test_single_event_journey_and_label():
    (j,) = build_journeys([ev(5)])
    assert j.NumSessions == 1 and j.interactionTime == 0
    (j,) = build_journeys([ev(5), ev(9, P)])
    assert j.purchased == 1


def test_insession_amounts_are_max_over_sessions():
    events = [ev(0, C, price=3, session="a"), ev(1, C, price=4, session="a"), ev(2, C, price=5, session="b")]
    (j,) = build_journeys(events)
    assert j.InsessionCart == 7.0
    assert j.InsessionView == 0.0 and j.InsessionRemove == 0.0


@given(event_sets())
@settings(max_examples=60, deadline=None)
def test_sessions_match_naive_oracle(events):
    got = {s.session_id: s for s in sessionize(events)}
    ref = naive_sessions(events)
    assert set(got) == set(ref)
    for sid, rec in ref.items():
        assert fields_equal(got[sid], rec) == []


@given(event_sets())
@settings(max_examples=60, deadline=None)
def test_journeys_match_naive_oracle(events):
    got = {(j.user_id, j.product_id): j for j in build_journeys(events)}
    ref = naive_journeys(events)
    assert set(got) == set(ref)
    for key, rec in ref.items():
        assert fields_equal(got[key], rec) == []


@given(event_sets())
@settings(max_examples=40, deadline=None)
def test_record_invariants(events):
    sessions = list(sessionize(events))
    journeys = list(build_journeys(events))
    for s in sessions:
        assert s.interactionTime >= 0
        assert s.NumProdsCartedInSession <= s.NumTimesCartedInSession
        assert s.NumProdsViewedInSession <= s.NumTimesViewedInSession
    for j in journeys:
        assert j.NumSessions >= 1 and j.minPrice <= j.maxPrice
        assert j.NumOfEventsInJourney == j.NumCart + j.NumView + j.NumRemove + j.NumPurchase
    per_user = {}
    for s in sessions:
        per_user[s.user_id] = per_user.get(s.user_id, 0) + s.TotalEventsInSession
    counts = {}
    for e in events:
        counts[e.user_id] = counts.get(e.user_id, 0) + 1
    assert per_user == counts
    # journey label is the OR over its sessions restricted to that product
    for j in journeys:
        bought = any(e.event_type == P for e in events if (e.user_id, e.product_id) == (j.user_id, j.product_id))
        assert j.purchased == int(bought)


def _snapshot(records):
    return sorted(
        (tuple(float(v).hex() if isinstance(v, float) else v for v in (getattr(r, f) for f in r.__slots__)) for r in records),
        key=repr,
    )


@given(event_sets(), st.sampled_from([1, 2, 4, 8]))
@settings(max_examples=40, deadline=None)
def test_partition_merge_equivalence(events, parts):
    for agg, fn in ((SessionAggregator(), sessionize), (JourneyAggregator(), build_journeys)):
        single = _snapshot(fn(events))
        split = _snapshot(aggregate_partitioned(events, agg, parts).values())
        assert split == single


@given(event_sets(), st.integers(1, 7))
@settings(max_examples=40, deadline=None)
def test_chunk_merge_and_spill_equivalence(tmp_path_factory, events, chunk):
    for agg, fn in ((SessionAggregator(), sessionize), (JourneyAggregator(), build_journeys)):
        single = _snapshot(fn(events))
        total = GroupBy(agg)
        for s in range(0, len(events), chunk):
            part = GroupBy(agg)
            part.seq = s
            part.feed(events[s : s + chunk])
            total.merge_states(part.partial_states())
        assert _snapshot(total.results()) == single
        spill_dir = tmp_path_factory.mktemp("spill")
        assert _snapshot(fn(events, max_groups=chunk, spill_dir=spill_dir, partitions=3)) == single
        assert not any(spill_dir.iterdir())


def test_exact_sum_is_order_free():
    vals = [0.1] * 10 + [1e16, -1e16, 3.3]
    a, b = [], []
    for v in vals:
        exact_add(a, v)
    for v in reversed(vals):
        exact_add(b, v)
    assert exact_value(a) == exact_value(b) == __import__("math").fsum(vals)


def test_records_round_trip(tmp_path):
    events = [ev(0, V, price=0.1), ev(3, C, price=0.2, session="s2"), ev(9, P, price=0.3, product="p2")]
    sessions = list(sessionize(events))
    path = tmp_path / "sessions.csv"
    n = write_records(path, sessions, SessionFeatures, {"level": "session"})
    frame = read_records(path)
    assert n == len(frame) == 2
    assert frame["session_id"].tolist() == [s.session_id for s in sessions]
    assert frame["AvgAmtViewedInSession"].tolist()[0] == 0.1
    meta = json.loads((tmp_path / "sessions.csv.meta.json").read_text())
    assert meta["level"] == "session" and meta["rows"] == 2
    journeys = list(build_journeys(events))
    write_records(tmp_path / "j.csv", journeys, JourneyFeatures)
    assert read_records(tmp_path / "j.csv")["user_id"].dtype == object


def test_encode_matrix_standardization():
    frame = pd.DataFrame({"a": [1.0, 3.0], "b": [5.0, 5.0], "purchased": [0, 1]})
    fm = encode_matrix(frame, ["a", "b"], standardize=True, level="journey")
    assert fm.values[:, 0].tolist() == [-1.0, 1.0]
    assert fm.values[:, 1].tolist() == [0.0, 0.0]
    assert fm.labels.tolist() == [0, 1]
    with pytest.raises(KeyError):
        encode_matrix(frame, ["zzz"])


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=40))
def test_standardized_columns_have_zero_mean(values):
    frame = pd.DataFrame({"x": values, "purchased": [0] * len(values)})
    fm = encode_matrix(frame, ["x"], standardize=True, level="journey")
    assert abs(fm.values.mean()) < 1e-9
    recovered = fm.values[:, 0] * fm.standardization.scale[0] + fm.standardization.mean[0]
    assert np.allclose(recovered, values, atol=1e-6)


def test_default_feature_sets_exclude_label_leaks():
    assert "NumPurchase" not in JOURNEY_FEATURES
    assert "purchased" not in SESSION_FEATURES and "purchased" not in JOURNEY_FEATURES
    assert len(SESSION_FEATURES) == 22
