from __future__ import annotations

import dataclasses
import json

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clickjourney.aggregate import build_journeys, records_frame
from clickjourney.ingest import PRESETS as CLEANING, EventType, clean_events, iter_events
from clickjourney.synth import (
    ELECTRONICS_PRESETS,
    PRESETS,
    BoundedInt,
    check_specs,
    generate,
    planted_pr,
    preset,
    price_signal_events,
    users_for_events,
    write_synthetic,
)


def test_zero_users_empty_stream():
    events, truth = generate(preset("cosmetics-like"), 0, seed=1)
    assert events == [] and len(truth.purchased) == 0


def test_zero_purchase_probability():
    specs = [dataclasses.replace(s, purchase_prob=0.0) for s in preset("cosmetics-like")]
    events, truth = generate(specs, 500, seed=2)
    assert not any(e.event_type == EventType.PURCHASE for e in events)
    assert truth.purchased.sum() == 0


def test_invalid_specs_rejected():
    specs = preset("cosmetics-like")
    with pytest.raises(ValueError):
        check_specs([dataclasses.replace(specs[0], share=0.5)])
    with pytest.raises(ValueError):
        generate(specs[:2], 10)
    with pytest.raises(ValueError):
        dataclasses.replace(specs[0], price_min=10.0, price_max=1.0)
    with pytest.raises(ValueError):
        BoundedInt(3, 2)
    with pytest.raises(ValueError):
        preset("nope")


def test_bounded_int_pmf():
    b = BoundedInt(2, 4, 0.5)
    assert b.pmf() == pytest.approx([4 / 7, 2 / 7, 1 / 7])
    draws = b.sample(np.random.default_rng(0), 20000)
    assert draws.min() == 2 and draws.max() == 4
    assert draws.mean() == pytest.approx(b.mean(), abs=0.03)


@given(st.integers(0, 2**31 - 1), st.integers(1, 60))
@settings(max_examples=15, deadline=None)
def test_deterministic_under_seed(seed, n):
    a, ta = generate(preset("cosmetics-like"), n, seed=seed)
    b, tb = generate(preset("cosmetics-like"), n, seed=seed)
    assert a == b and np.array_equal(ta.purchased, tb.purchased)


@pytest.fixture(scope="module")
def cosmetics_10k():
    return generate(preset("cosmetics-like"), 10_000, seed=42)


def test_planted_pr_recovered(cosmetics_10k):
    events, truth = cosmetics_10k
    assert abs(truth.planted_pr - 0.12) < 0.005
    assert abs(truth.realized_pr - truth.planted_pr) <= 0.02
    journeys = records_frame(build_journeys(events))
    assert abs(journeys["purchased"].mean() - truth.planted_pr) <= 0.02


def test_stream_invariants(cosmetics_10k):
    events, truth = cosmetics_10k
    lo, hi = pd.Timestamp("2019-10-01", tz="UTC").timestamp(), pd.Timestamp("2020-03-01", tz="UTC").timestamp()
    times = [e.event_time for e in events]
    assert times == sorted(times)
    assert lo <= times[0] and times[-1] < hi
    out, stats = clean_events(events, CLEANING["cosmetics"])
    assert len(list(out)) == len(events)
    assert sum(stats.rows_dropped.values()) == 0


def test_ground_truth_matches_stream(cosmetics_10k):
    events, truth = cosmetics_10k
    journeys = records_frame(build_journeys(events))
    merged = journeys.merge(truth.frame().rename(columns={"purchased": "planted"}), on=["user_id", "product_id"])
    assert len(merged) == len(journeys) == len(truth.purchased)
    assert (merged["purchased"] == merged["planted"]).all()


def test_archetype_means_recovered(cosmetics_10k):
    events, truth = cosmetics_10k
    journeys = records_frame(build_journeys(events)).merge(
        truth.frame().drop(columns="purchased"), on=["user_id", "product_id"])
    for spec in truth.specs:
        sub = journeys[journeys["archetype"] == spec.name]
        assert len(sub) >= 150
        non_purchase = (sub["NumOfEventsInJourney"] - sub["NumPurchase"]).mean()
        assert sub["NumSessions"].mean() == pytest.approx(spec.mean_sessions(), rel=0.10)
        assert non_purchase == pytest.approx(spec.mean_events(), rel=0.10)
        assert sub["minPrice"].mean() == pytest.approx(spec.mean_price(), rel=0.10)
        assert sub["minPrice"].min() >= spec.price_min and sub["maxPrice"].max() <= spec.price_max


def test_electronics_preset_has_no_removals():
    assert ELECTRONICS_PRESETS == {"electronics-like"}
    events, truth = generate(preset("electronics-like"), 3000, seed=3, electronics=True)
    assert not any(e.event_type == EventType.REMOVE_FROM_CART for e in events)
    assert all(e.category_code.startswith("electronics.") for e in events)
    out, stats = clean_events(events, CLEANING["electronics"])
    assert len(list(out)) == len(events)
    assert planted_pr(truth.specs) == pytest.approx(0.0096, abs=1e-4)


def test_table_vi_preset_pattern():
    specs = preset("table-vi-like")
    shares = [s.share for s in specs]
    prs = [s.purchase_prob for s in specs]
    assert shares == sorted(shares, reverse=True)
    assert prs == sorted(prs) and prs[-1] / planted_pr(specs) >= 3


def test_write_synthetic_with_sidecar(tmp_path):
    path = tmp_path / "events.csv"
    truth = write_synthetic(path, preset("cosmetics-like"), n_users=200, seed=9)
    events = list(iter_events(path))
    assert len(truth.purchased) == 200
    again, _ = generate(preset("cosmetics-like"), 200, seed=9)
    assert events == again
    truth = json.loads((tmp_path / "events.csv.truth.json").read_text())
    assert truth["n_users"] == 200 and truth["events"] == len(events) and len(truth["per_journey"]) == 200


@pytest.mark.parametrize("name", sorted(PRESETS))
@pytest.mark.parametrize("seed", [4, 5, 6])
def test_users_for_events_reaches_target(name, seed):
    specs = preset(name)
    n_users = users_for_events(specs, 20_000)
    events, _ = generate(specs, n_users, seed=seed)
    assert 20_000 <= len(events) <= 26_000
    # the relative margin shrinks with scale
    assert users_for_events(specs, 10_000_000) / n_users < 1.04 * 500


def test_price_signal_events_shape():
    events = price_signal_events(200, seed=1)
    prices = {e.user_id: e.price for e in events}
    assert min(prices.values()) >= 10 and max(prices.values()) <= 300
    out, stats = clean_events(events, CLEANING["cosmetics"])
    assert len(list(out)) == len(events)


def test_presets_cover_both_families():
    assert set(PRESETS) == {"cosmetics-like", "electronics-like", "table-vi-like"}
    for name in PRESETS:
        check_specs(PRESETS[name])
