from __future__ import annotations

import numpy as np
import pytest
from hypothesis import strategies as st

from clickjourney.ingest import EventType, RawEvent

T0 = 1_575_158_400  # 2019-12-01 00:00:00 UTC


def ev(t, kind=EventType.VIEW, product="p1", price=1.0, user="u1", session="s1", brand=None,
       category_id=None, category_code=None) -> RawEvent:
    return RawEvent(T0 + t, EventType(kind), product, category_id, category_code, brand, float(price), user, session)


@st.composite
def event_sets(draw, max_events=50):
    """Small clean streams: few users, products, sessions, brands; each session owned by one user."""
    n = draw(st.integers(1, max_events))
    n_users = draw(st.integers(1, 3))
    sessions_per_user = draw(st.integers(1, 3))
    out = []
    for _ in range(n):
        u = draw(st.integers(0, n_users - 1))
        s = draw(st.integers(0, sessions_per_user - 1))
        out.append(
            RawEvent(
                T0 + draw(st.integers(0, 200_000)),
                EventType(draw(st.integers(1, 4))),
                f"p{draw(st.integers(0, 3))}",
                None,
                None,
                draw(st.sampled_from([None, "b0", "b1", "b2"])),
                draw(st.sampled_from([0.0, 0.1, 0.2, 0.3, 1.19, 6.27, 29.05, 300.91, 359.47, 1e-3, 1e6 + 0.01])),
                f"u{u}",
                f"u{u}s{s}",
            )
        )
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --------------------------------------------------------------------------
# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary

_CRITERIA: dict[int, list[str]] = {}


def pytest_runtest_logreport(report):
    marks = getattr(report, "criterion", None)
    if marks is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _CRITERIA.setdefault(marks, []).append(outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = mark.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        results = _CRITERIA[n]
        if "FAIL" in results:
            verdict = "FAIL"
        elif all(r == "SKIP" for r in results):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        terminalreporter.write_line(f"criterion {n:>2}: {verdict}")
