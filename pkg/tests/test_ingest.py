from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clickjourney.ingest import (
    COLUMNS,
    PRESETS,
    CleaningRules,
    EventType,
    ParseError,
    clean_events,
    format_event_row,
    format_timestamp,
    iter_events,
    parse_event_row,
    parse_timestamp,
    read_chunks,
    sidecar,
    write_event_cache,
    write_events,
)

from conftest import ev, event_sets

FIG3_ROW = [
    "2019-12-01 00:00:00 UTC",
    "remove_from_cart",
    "5712790",
    "1487580005268456287",
    "",
    "f.o.x",
    "6.27",
    "576802932",
    "51085030-8071-4822-918c-a903905c12dc",
]


def test_event_type_has_exactly_four_variants():
    assert [e.label for e in EventType] == ["view", "cart", "remove_from_cart", "purchase"]
    assert EventType.parse("cart") is EventType.CART
    with pytest.raises(ValueError):
        EventType.parse("wishlist")


def test_parse_sample_row():
    e = parse_event_row(FIG3_ROW)
    assert e.event_type is EventType.REMOVE_FROM_CART
    assert e.price == 6.27
    assert e.user_id == "576802932"
    assert e.product_id == "5712790"
    assert e.brand == "f.o.x"
    assert e.category_code is None
    assert e.timestamp.isoformat() == "2019-12-01T00:00:00+00:00"


def test_empty_brand_is_absent():
    row = list(FIG3_ROW)
    row[5] = ""
    assert parse_event_row(row).brand is None


@pytest.mark.parametrize(
    "index,value",
    [(6, "abc"), (6, "nan"), (6, "inf"), (0, "2019-12-01 00:00:00"), (0, "2019-13-01 00:00:00 UTC"),
     (0, "2019-12-01 24:00:00 UTC"), (1, "like"), (2, ""), (7, "")],
)
def test_malformed_fields_raise_with_row(index, value):
    row = list(FIG3_ROW)
    row[index] = value
    with pytest.raises(ParseError) as info:
        parse_event_row(row, row=17)
    assert info.value.row == 17


def test_wrong_field_count():
    with pytest.raises(ParseError):
        parse_event_row(FIG3_ROW[:-1], row=3)


def test_parse_with_permuted_schema():
    schema = list(reversed(COLUMNS))
    assert parse_event_row(list(reversed(FIG3_ROW)), schema=schema) == parse_event_row(FIG3_ROW)


@given(st.integers(0, 4_000_000_000))
def test_timestamp_round_trip(epoch):
    assert parse_timestamp(format_timestamp(epoch)) == epoch


@given(event_sets(max_events=10))
def test_row_round_trip(events):
    for e in events:
        assert parse_event_row(format_event_row(e)) == e


def test_negative_price_and_missing_session_dropped():
    events = [ev(0, price=-1.0), ev(1, session=None), ev(2, price=0.0), ev(3)]
    out, stats = clean_events(events, CleaningRules())
    kept = list(out)
    assert [e.event_time for e in kept] == [ev(2).event_time, ev(3).event_time]
    assert stats.rows_dropped == {"missing_session": 1, "negative_price": 1}
    assert stats.reconciles()


def test_valid_stream_unchanged():
    events = [ev(i, price=i) for i in range(5)]
    out, stats = clean_events(events, CleaningRules())
    assert list(out) == events
    assert all(v == 0 for v in stats.rows_dropped.values())


def test_electronics_preset_filters_category():
    events = [
        ev(0, category_code="electronics.smartphone", brand="x", category_id="1"),
        ev(1, category_code="appliances.kitchen", brand="x"),
        ev(2, category_code="electronics.audio", brand=None),
    ]
    out, stats = clean_events(events, PRESETS["electronics"])
    kept = list(out)
    assert len(kept) == 1 and kept[0].category_id is None
    assert stats.rows_dropped["category_filter"] == 1
    assert stats.rows_dropped["missing_brand_or_category"] == 1


def test_rules_cannot_read_dropped_columns():
    with pytest.raises(ValueError):
        CleaningRules(category_filter="electronics", drop_columns=("category_code",))
    with pytest.raises(ValueError):
        CleaningRules(drop_columns=("price",))


@given(event_sets(), st.sampled_from(sorted(PRESETS)))
def test_cleaning_idempotent_and_reconciles(events, preset):
    rules = PRESETS[preset]
    once, s1 = clean_events(events, rules)
    once = list(once)
    twice, s2 = clean_events(once, rules)
    assert list(twice) == once
    assert s1.reconciles() and s2.reconciles()
    assert sum(s2.rows_dropped.values()) == 0


@given(event_sets(max_events=12), st.integers(1, 15))
@settings(max_examples=30, deadline=None)
def test_chunked_read_equals_whole(tmp_path_factory, events, chunk):
    path = tmp_path_factory.mktemp("chunks") / "events.csv"
    write_events(path, events)
    whole = list(iter_events(path))
    assert whole == events
    batches = list(read_chunks(path, chunk))
    assert [e for b in batches for e in b] == whole
    assert all(len(b) == chunk for b in batches[:-1])


def test_chunk_sizes(tmp_path):
    path = tmp_path / "e.csv"
    write_events(path, [ev(i) for i in range(10)])
    assert [len(b) for b in read_chunks(path, 4)] == [4, 4, 2]
    assert [len(b) for b in read_chunks(path, 10)] == [10]
    assert [len(b) for b in read_chunks(path, 50)] == [10]
    with pytest.raises(ValueError):
        list(read_chunks(path, 0))


def test_header_only_file_is_empty(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text(",".join(COLUMNS) + "\n")
    assert list(read_chunks(path, 3)) == []


def test_bad_header_rejected(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError):
        list(iter_events(path))


def test_leading_index_column_tolerated(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text("," + ",".join(COLUMNS) + "\n0," + ",".join(FIG3_ROW) + "\n")
    assert list(iter_events(path)) == [parse_event_row(FIG3_ROW)]


def test_skip_malformed_collects_errors(tmp_path):
    path = tmp_path / "e.csv"
    bad = list(FIG3_ROW)
    bad[6] = "abc"
    path.write_text(",".join(COLUMNS) + "\n" + ",".join(FIG3_ROW) + "\n" + ",".join(bad) + "\n")
    with pytest.raises(ParseError):
        list(iter_events(path))
    errors = []
    assert len(list(iter_events(path, skip_malformed=True, errors=errors))) == 1
    assert errors[0].row == 1


def test_event_cache_sidecar(tmp_path):
    path = tmp_path / "clean.csv"
    stats = write_event_cache(path, [ev(0), ev(1, price=-2.0)], PRESETS["cosmetics"])
    meta = json.loads(sidecar(path).read_text())
    assert meta["stats"]["rows_emitted"] == 1 == stats.rows_emitted
    assert meta["rules"]["drop_columns"] == ["category_code", "brand"]
    assert meta["schema_version"] == 1
    assert len(list(iter_events(path))) == 1
