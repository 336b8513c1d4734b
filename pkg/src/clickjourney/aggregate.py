"""Session- and journey-level feature aggregation.

Events are folded into per-group partial states by :class:`GroupBy`, a hash
aggregation that spills partial states to disk partitions once the number of
resident groups passes a cap. Every partial state merges associatively:
counts add, sets union, min/max and first/last combine, and price sums are
kept as exact floating-point expansions so merged totals round identically
no matter how the stream was chunked, partitioned or spilled.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import enum
import json
import math
import os
import pickle
import shutil
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Hashable, Iterable, Iterator, Sequence

import numpy as np
import pandas as pd

from .ingest import EventType, RawEvent

SCALE_FLOOR = 1e-12


class TimeOfDay(enum.IntEnum):
    DAWN = 0  # [0, 5)
    EARLY_MORNING = 1  # [5, 8)
    MORNING = 2  # [8, 11]
    NOON = 3  # (11, 13)
    AFTERNOON = 4  # [13, 17)
    EVENING = 5  # [17, 21)
    NIGHT = 6  # [21, 24)


_HOUR_BINS = (
    [TimeOfDay.DAWN] * 5
    + [TimeOfDay.EARLY_MORNING] * 3
    + [TimeOfDay.MORNING] * 4
    + [TimeOfDay.NOON]
    + [TimeOfDay.AFTERNOON] * 4
    + [TimeOfDay.EVENING] * 4
    + [TimeOfDay.NIGHT] * 3
)


def time_of_day(hour: int) -> TimeOfDay:
    if not 0 <= hour <= 23:
        raise ValueError(f"hour out of range: {hour}")
    return _HOUR_BINS[hour]


def calendar_fields(epoch: int) -> dict[str, int]:
    """DayOfWeek (Monday=0), TimeOfDay ordinal, Year, Month, Weekend."""
    t = dt.datetime.fromtimestamp(epoch, dt.timezone.utc)
    dow = t.weekday()
    return {
        "DayOfWeek": dow,
        "TimeOfDay": int(time_of_day(t.hour)),
        "Year": t.year,
        "Month": t.month,
        "Weekend": int(dow >= 5),
    }


# --------------------------------------------------------------------------
# exact summation (Shewchuk expansions, as in math.fsum)


def exact_add(partials: list[float], x: float) -> None:
    i = 0
    for y in partials:
        if abs(x) < abs(y):
            x, y = y, x
        hi = x + y
        lo = y - (hi - x)
        if lo:
            partials[i] = lo
            i += 1
        x = hi
    partials[i:] = [x]


def exact_merge(a: list[float], b: list[float]) -> list[float]:
    for x in b:
        exact_add(a, x)
    return a


def exact_value(partials: list[float]) -> float:
    return math.fsum(partials)


# --------------------------------------------------------------------------
# group-by engine


def _key_bytes(key) -> bytes:
    if isinstance(key, tuple):
        return "\x1f".join(map(str, key)).encode()
    return str(key).encode()


def partition_of(key, partitions: int) -> int:
    return zlib.crc32(_key_bytes(key)) % partitions


class Aggregator:
    """Fold rule for one record type. Subclasses define the five hooks."""

    def key(self, e: RawEvent) -> Hashable | None:
        raise NotImplementedError

    def init(self, e: RawEvent, seq: int) -> Any:
        raise NotImplementedError

    def update(self, state: Any, e: RawEvent, seq: int) -> None:
        raise NotImplementedError

    def merge(self, a: Any, b: Any) -> Any:
        raise NotImplementedError

    def finalize(self, key, state) -> Any:
        raise NotImplementedError


class GroupBy:
    """Hash aggregation with spill-to-disk partitions.

    While fewer than ``max_groups`` groups are resident everything stays in
    memory and results come out sorted by key. Past the cap all partial
    states are flushed to ``partitions`` pickle files (routed by a stable
    key hash); at the end each partition is reloaded, merged and finalized
    on its own, so results come out partition by partition, sorted by key
    within each.
    """

    def __init__(
        self,
        aggregator: Aggregator,
        max_groups: int | None = None,
        spill_dir: str | Path | None = None,
        partitions: int = 32,
    ):
        if max_groups is not None and max_groups < 1:
            raise ValueError("max_groups must be positive")
        self.agg = aggregator
        self.max_groups = max_groups
        self.partitions = partitions
        self._spill_root = spill_dir
        self._spill_dir: Path | None = None
        self.groups: dict = {}
        self.spills = 0
        self.seq = 0

    def feed(self, events: Iterable[RawEvent]) -> None:
        agg, groups = self.agg, self.groups
        key_of, init, update = agg.key, agg.init, agg.update
        seq = self.seq
        for e in events:
            k = key_of(e)
            if k is not None:
                st = groups.get(k)
                if st is None:
                    groups[k] = init(e, seq)
                    if self.max_groups is not None and len(groups) >= self.max_groups:
                        self.spill()
                else:
                    update(st, e, seq)
            seq += 1
        self.seq = seq

    def add(self, e: RawEvent) -> None:
        self.feed((e,))

    def spill(self) -> None:
        if self._spill_dir is None:
            if self._spill_root is not None:
                os.makedirs(self._spill_root, exist_ok=True)
            self._spill_dir = Path(tempfile.mkdtemp(prefix="groupby-", dir=self._spill_root))
        buckets: list[list] = [[] for _ in range(self.partitions)]
        for k, st in self.groups.items():
            buckets[partition_of(k, self.partitions)].append((k, st))
        for p, items in enumerate(buckets):
            if items:
                with open(self._spill_dir / f"part-{p:04d}.pkl", "ab") as fh:
                    pickle.dump(items, fh, protocol=pickle.HIGHEST_PROTOCOL)
        self.groups.clear()
        self.spills += 1

    def partial_states(self) -> dict:
        """Resident partial states (only meaningful before any spill)."""
        return self.groups

    def merge_states(self, other: dict) -> None:
        for k, st in other.items():
            mine = self.groups.get(k)
            self.groups[k] = st if mine is None else self.agg.merge(mine, st)

    def results(self) -> Iterator:
        finalize = self.agg.finalize
        if self._spill_dir is None:
            for k in sorted(self.groups):
                yield finalize(k, self.groups[k])
            self.groups.clear()
            return
        self.spill()
        try:
            for p in range(self.partitions):
                path = self._spill_dir / f"part-{p:04d}.pkl"
                if not path.exists():
                    continue
                merged: dict = {}
                with open(path, "rb") as fh:
                    while True:
                        try:
                            items = pickle.load(fh)
                        except EOFError:
                            break
                        for k, st in items:
                            mine = merged.get(k)
                            merged[k] = st if mine is None else self.agg.merge(mine, st)
                path.unlink()
                for k in sorted(merged):
                    yield finalize(k, merged[k])
                del merged
        finally:
            shutil.rmtree(self._spill_dir, ignore_errors=True)
            self._spill_dir = None


# --------------------------------------------------------------------------
# records


@dataclass(slots=True)
class SessionFeatures:
    session_id: str
    user_id: str
    start_time: int
    TotalEventsInSession: int
    interactionTime: int
    NumTimesCartedInSession: int
    NumTimesViewedInSession: int
    NumTimesRemovedInSession: int
    AvgAmtCartedInSession: float
    AvgAmtViewedInSession: float
    AvgAmtRemovedInSession: float
    NumBrandsCartedInSession: int
    NumBrandsViewedInSession: int
    NumBrandsRemovedInSession: int
    OverallAmtUserCarted: float
    OverallAmtUserViewed: float
    OverallAmtUserRemoved: float
    NumProdsCartedInSession: int
    NumProdsViewedInSession: int
    NumProdsRemovedInSession: int
    DayOfWeek: int
    TimeOfDay: int
    Year: int
    Month: int
    Weekend: int
    purchased: int


@dataclass(slots=True)
class JourneyFeatures:
    user_id: str
    product_id: str
    last_time: int
    NumOfEventsInJourney: int
    NumSessions: int
    interactionTime: int
    NumCart: int
    NumView: int
    NumRemove: int
    NumPurchase: int
    minPrice: float
    maxPrice: float
    InsessionCart: float
    InsessionView: float
    InsessionRemove: float
    DayOfWeek: int
    TimeOfDay: int
    Year: int
    Month: int
    Weekend: int
    purchased: int


SESSION_ID_COLUMNS = ("session_id", "user_id", "start_time")
JOURNEY_ID_COLUMNS = ("user_id", "product_id", "last_time")

# NumPurchase is the label in disguise, so it is never a feature.
SESSION_FEATURES = tuple(
    f.name for f in dataclasses.fields(SessionFeatures) if f.name not in SESSION_ID_COLUMNS + ("purchased",)
)
JOURNEY_FEATURES = tuple(
    f.name
    for f in dataclasses.fields(JourneyFeatures)
    if f.name not in JOURNEY_ID_COLUMNS + ("purchased", "NumPurchase")
)
DATETIME_FEATURES = ("DayOfWeek", "TimeOfDay", "Year", "Month", "Weekend")

# journey feature sets selected for the two reference datasets
SELECTED_JOURNEY_FEATURES = {
    "cosmetics": (
        "NumOfEventsInJourney", "NumSessions", "interactionTime", "NumCart", "NumView", "NumRemove",
        "minPrice", "maxPrice", "InsessionView", "InsessionCart", "InsessionRemove",
    ),
    "electronics": (
        "NumOfEventsInJourney", "NumSessions", "interactionTime", "NumCart", "NumView",
        "minPrice", "maxPrice", "InsessionView", "InsessionCart",
    ),
}

_ACTION = {EventType.VIEW: 0, EventType.CART: 1, EventType.REMOVE_FROM_CART: 2}


class SessionAggregator(Aggregator):
    # state: [first(t, seq, user), last_t, n, counts[3], sums[3], brands[3], prods[3], purchased]

    def key(self, e):
        return e.user_session

    def init(self, e, seq):
        st = [(e.event_time, seq, e.user_id), e.event_time, 0, [0, 0, 0], [[], [], []], [None] * 3, [None] * 3, 0]
        self.update(st, e, seq)
        return st

    def update(self, st, e, seq):
        t = e.event_time
        if t < st[0][0]:
            st[0] = (t, seq, e.user_id)
        if t > st[1]:
            st[1] = t
        st[2] += 1
        a = _ACTION.get(e.event_type)
        if a is None:
            st[7] = 1
            return
        st[3][a] += 1
        exact_add(st[4][a], e.price)
        if e.brand is not None:
            if st[5][a] is None:
                st[5][a] = {e.brand}
            else:
                st[5][a].add(e.brand)
        if st[6][a] is None:
            st[6][a] = {e.product_id}
        else:
            st[6][a].add(e.product_id)

    def merge(self, a, b):
        a[0] = min(a[0], b[0])
        a[1] = max(a[1], b[1])
        a[2] += b[2]
        for i in range(3):
            a[3][i] += b[3][i]
            exact_merge(a[4][i], b[4][i])
            for j in (5, 6):
                if b[j][i] is not None:
                    a[j][i] = set(b[j][i]) if a[j][i] is None else a[j][i] | b[j][i]
        a[7] |= b[7]
        return a

    def finalize(self, key, st):
        (t0, _, user), t1, n, counts, sums, brands, prods, purchased = st
        total = [exact_value(s) for s in sums]
        avg = [total[i] / counts[i] if counts[i] else 0.0 for i in range(3)]
        nb = [len(s) if s else 0 for s in brands]
        npr = [len(s) if s else 0 for s in prods]
        return SessionFeatures(
            key, user, t0, n, t1 - t0,
            counts[1], counts[0], counts[2],
            avg[1], avg[0], avg[2],
            nb[1], nb[0], nb[2],
            total[1], total[0], total[2],
            npr[1], npr[0], npr[2],
            **calendar_fields(t0),
            purchased=purchased,
        )


class JourneyAggregator(Aggregator):
    # state: [first_t, last_t, n, counts[4] (view, cart, remove, purchase), min, max,
    #         {session: [view_sum, cart_sum, remove_sum]}]

    def key(self, e):
        return (e.user_id, e.product_id)

    def init(self, e, seq):
        st = [e.event_time, e.event_time, 0, [0, 0, 0, 0], e.price, e.price, {}]
        self.update(st, e, seq)
        return st

    def update(self, st, e, seq):
        t = e.event_time
        if t < st[0]:
            st[0] = t
        elif t > st[1]:
            st[1] = t
        st[2] += 1
        p = e.price
        if p < st[4]:
            st[4] = p
        if p > st[5]:
            st[5] = p
        sess = st[6].get(e.user_session)
        if sess is None:
            sess = st[6][e.user_session] = [[], [], []]
        a = _ACTION.get(e.event_type)
        if a is None:
            st[3][3] += 1
        else:
            st[3][a] += 1
            exact_add(sess[a], p)

    def merge(self, a, b):
        a[0] = min(a[0], b[0])
        a[1] = max(a[1], b[1])
        a[2] += b[2]
        for i in range(4):
            a[3][i] += b[3][i]
        a[4] = min(a[4], b[4])
        a[5] = max(a[5], b[5])
        for s, sums in b[6].items():
            mine = a[6].get(s)
            if mine is None:
                a[6][s] = sums
            else:
                for i in range(3):
                    exact_merge(mine[i], sums[i])
        return a

    def finalize(self, key, st):
        t0, t1, n, counts, lo, hi, sessions = st
        best = [0.0, 0.0, 0.0]
        for sums in sessions.values():
            for i in range(3):
                v = exact_value(sums[i])
                if v > best[i]:
                    best[i] = v
        return JourneyFeatures(
            key[0], key[1], t1, n, len(sessions), t1 - t0,
            counts[1], counts[0], counts[2], counts[3],
            lo, hi,
            best[1], best[0], best[2],
            **calendar_fields(t1),
            purchased=int(counts[3] > 0),
        )


def sessionize(events: Iterable[RawEvent], **engine) -> Iterator[SessionFeatures]:
    """One :class:`SessionFeatures` per distinct ``user_session``."""
    g = GroupBy(SessionAggregator(), **engine)
    g.feed(events)
    return g.results()


def build_journeys(events: Iterable[RawEvent], **engine) -> Iterator[JourneyFeatures]:
    """One :class:`JourneyFeatures` per (user_id, product_id)."""
    g = GroupBy(JourneyAggregator(), **engine)
    g.feed(events)
    return g.results()


def aggregate_partitioned(events: Iterable[RawEvent], aggregator: Aggregator, partitions: int) -> dict:
    """Route events to ``partitions`` workers by key hash, aggregate each, union the results."""
    workers = [GroupBy(aggregator) for _ in range(partitions)]
    for e in events:
        k = aggregator.key(e)
        if k is not None:
            workers[partition_of(k, partitions)].add(e)
    out = {}
    for w in workers:
        for k, st in w.groups.items():
            out[k] = aggregator.finalize(k, st)
    return out


# --------------------------------------------------------------------------
# caches


def write_records(path: str | Path, records: Iterable, record_type: type, meta: dict | None = None) -> int:
    """Write records as headered CSV plus a JSON sidecar; returns the row count."""
    path = Path(path)
    names = [f.name for f in dataclasses.fields(record_type)]
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for r in records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in map(r.__getattribute__, names)])
            n += 1
    info = {"record_type": record_type.__name__, "columns": names, "rows": n}
    info.update(meta or {})
    path.with_name(path.name + ".meta.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return n


_ID_DTYPES = {"session_id": str, "user_id": str, "product_id": str}


def read_records(path: str | Path) -> pd.DataFrame:
    return pd.read_csv(path, dtype=_ID_DTYPES, keep_default_na=False)


def records_frame(records: Sequence | pd.DataFrame) -> pd.DataFrame:
    if isinstance(records, pd.DataFrame):
        return records
    records = list(records)
    if not records:
        return pd.DataFrame()
    names = [f.name for f in dataclasses.fields(records[0])]
    return pd.DataFrame([dataclasses.astuple(r) for r in records], columns=names)


# --------------------------------------------------------------------------
# matrices


@dataclass
class Standardization:
    mean: np.ndarray
    scale: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.scale

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}


def fit_standardization(values: np.ndarray) -> Standardization:
    mean = values.mean(axis=0)
    scale = values.std(axis=0)
    return Standardization(mean, np.maximum(scale, SCALE_FLOOR))


@dataclass
class FeatureMatrix:
    values: np.ndarray
    column_names: list[str]
    labels: np.ndarray
    level: str = "journey"
    standardization: Standardization | None = None

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.column_names):
            raise ValueError("values and column_names disagree")
        if len(self.labels) != len(self.values):
            raise ValueError("labels and values disagree")

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.column_names.index(name)]

    def subset(self, rows) -> FeatureMatrix:
        return FeatureMatrix(self.values[rows], self.column_names, self.labels[rows], self.level, self.standardization)

    def select(self, columns: Sequence[str]) -> FeatureMatrix:
        idx = [self.column_names.index(c) for c in columns]
        std = None
        if self.standardization is not None:
            std = Standardization(self.standardization.mean[idx], self.standardization.scale[idx])
        return FeatureMatrix(self.values[:, idx], list(columns), self.labels, self.level, std)


def encode_matrix(
    records: Sequence | pd.DataFrame,
    selected_columns: Sequence[str] | None = None,
    standardize: bool = False,
    level: str | None = None,
) -> FeatureMatrix:
    """Numeric matrix of the chosen feature columns plus the purchase labels.

    TimeOfDay and DayOfWeek are already stored as ordinal codes. With
    ``standardize`` every column is z-scored with its mean and population
    standard deviation (scale floored at 1e-12).
    """
    frame = records_frame(records)
    if level is None:
        level = "session" if "session_id" in frame.columns else "journey"
    if selected_columns is None:
        selected_columns = SESSION_FEATURES if level == "session" else JOURNEY_FEATURES
    missing = [c for c in selected_columns if c not in frame.columns]
    if missing and len(frame):
        raise KeyError(f"unknown columns: {missing}")
    if len(frame) == 0:
        values = np.zeros((0, len(selected_columns)))
        labels = np.zeros(0, dtype=np.int64)
    else:
        values = frame[list(selected_columns)].to_numpy(dtype=np.float64)
        labels = frame["purchased"].to_numpy(dtype=np.int64)
    std = None
    if standardize and len(values):
        std = fit_standardization(values)
        values = std.apply(values)
    return FeatureMatrix(values, list(selected_columns), labels, level, std)

