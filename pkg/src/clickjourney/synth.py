"""Seeded synthetic clickstreams with planted shopper archetypes.

Each user owns one journey (one product) made of several sessions. Event
actions, prices, dwell times and the purchase flag are drawn from the
user's archetype. Users are generated in fixed-size blocks, each from its
own substream of the root seed, then every event is put in timestamp order
by one stable sort.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .ingest import COLUMNS, EventType, RawEvent

log = logging.getLogger(__name__)

BLOCK_USERS = 4096
USER_ID_BASE = 500_000_000
DEFAULT_RANGE = ("2019-10-01", "2020-03-01")


def _epoch(day: str | int) -> int:
    if isinstance(day, (int, np.integer)):
        return int(day)
    d = dt.datetime.strptime(day, "%Y-%m-%d").replace(tzinfo=dt.timezone.utc)
    return int(d.timestamp())


@dataclass(frozen=True)
class BoundedInt:
    """Geometric distribution on ``lo..hi``: P(k) proportional to (1-p)^(k-lo)."""

    lo: int
    hi: int
    p: float = 0.5

    def __post_init__(self):
        if not (1 <= self.lo <= self.hi) or not (0.0 < self.p <= 1.0):
            raise ValueError(f"bad bounded distribution {self}")

    def pmf(self) -> np.ndarray:
        w = (1.0 - self.p) ** np.arange(self.hi - self.lo + 1)
        return w / w.sum()

    def mean(self) -> float:
        return float(np.dot(np.arange(self.lo, self.hi + 1), self.pmf()))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        cdf = np.cumsum(self.pmf())
        cdf[-1] = 1.0
        return self.lo + np.searchsorted(cdf, rng.random(n), side="right")


@dataclass(frozen=True)
class ArchetypeSpec:
    name: str
    share: float
    sessions: BoundedInt
    events: BoundedInt  # per session, before any purchase event
    view: float
    cart: float
    remove: float
    price_min: float
    price_max: float
    purchase_prob: float
    dwell_median: float = 30.0  # seconds between events, log-normal
    dwell_sigma: float = 0.8
    brands: int = 10
    session_gap_hours: float = 48.0  # exponential gap between sessions

    def __post_init__(self):
        probs = (self.share, self.view, self.cart, self.remove, self.purchase_prob)
        if any(not (0.0 <= p <= 1.0) for p in probs):
            raise ValueError(f"{self.name}: probabilities must lie in [0, 1]")
        if self.view + self.cart + self.remove <= 0:
            raise ValueError(f"{self.name}: no action propensity")
        if self.price_min > self.price_max or self.price_min < 0:
            raise ValueError(f"{self.name}: bad price range")
        if self.brands < 1 or self.dwell_median <= 0:
            raise ValueError(f"{self.name}: bad brand pool or dwell")

    def action_probs(self) -> np.ndarray:
        a = np.array([self.view, self.cart, self.remove])
        return a / a.sum()

    def mean_sessions(self) -> float:
        return self.sessions.mean()

    def mean_events(self) -> float:
        """Expected non-purchase events per journey."""
        return self.sessions.mean() * self.events.mean()

    def mean_price(self) -> float:
        return 0.5 * (self.price_min + self.price_max)


def check_specs(specs: Sequence[ArchetypeSpec]) -> None:
    if not specs:
        raise ValueError("no archetypes")
    total = math.fsum(s.share for s in specs)
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"archetype shares sum to {total}, not 1")
    if len({s.name for s in specs}) != len(specs):
        raise ValueError("archetype names must be unique")


def planted_pr(specs: Sequence[ArchetypeSpec]) -> float:
    return math.fsum(s.share * s.purchase_prob for s in specs)


@dataclass
class GroundTruth:
    user_id: list[str]
    product_id: list[str]
    archetype: list[str]
    purchased: np.ndarray
    planted_pr: float
    specs: list[ArchetypeSpec] = field(default_factory=list)

    @property
    def realized_pr(self) -> float:
        return float(self.purchased.mean()) if len(self.purchased) else 0.0

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"user_id": self.user_id, "product_id": self.product_id, "archetype": self.archetype, "purchased": self.purchased}
        )

    def to_dict(self) -> dict:
        return {
            "planted_pr": self.planted_pr,
            "realized_pr": self.realized_pr,
            "journeys": len(self.purchased),
            "archetypes": [asdict(s) for s in self.specs],
            "per_journey": [
                {"user_id": u, "product_id": p, "archetype": a, "purchased": int(b)}
                for u, p, a, b in zip(self.user_id, self.product_id, self.archetype, self.purchased)
            ],
        }


@dataclass
class EventArrays:
    """Column-wise event table (unsorted until :meth:`sorted`)."""

    time: np.ndarray
    etype: np.ndarray
    user: np.ndarray  # global user index
    session: np.ndarray  # 63-bit session token
    product: np.ndarray
    category: np.ndarray
    brand: np.ndarray
    price: np.ndarray
    seq: np.ndarray  # position within the user's stream

    def __len__(self):
        return len(self.time)

    def take(self, idx) -> EventArrays:
        return EventArrays(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))

    def sorted(self) -> EventArrays:
        return self.take(np.lexsort((self.seq, self.user, self.time)))

    @classmethod
    def concat(cls, parts: list[EventArrays]) -> EventArrays:
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in cls.__dataclass_fields__))


@dataclass
class _Block:
    events: EventArrays
    users: np.ndarray
    arche: np.ndarray
    product: np.ndarray
    purchased: np.ndarray


def _gen_block(specs, arche: np.ndarray, users: np.ndarray, lo: int, hi: int, rng: np.random.Generator) -> _Block:
    n = len(users)
    purchased = np.zeros(n, dtype=bool)
    n_sess = np.zeros(n, dtype=np.int64)
    price = np.zeros(n)
    brand = np.zeros(n, dtype=np.int64)
    for a, spec in enumerate(specs):
        m = arche == a
        k = int(m.sum())
        if not k:
            continue
        purchased[m] = rng.random(k) < spec.purchase_prob
        n_sess[m] = spec.sessions.sample(rng, k)
        price[m] = np.round(rng.uniform(spec.price_min, spec.price_max, k), 2)
        brand[m] = a * 1000 + rng.integers(0, spec.brands, k)
    product = rng.integers(1_000_000, 10_000_000, n)
    category = rng.integers(0, 20, n)

    # sessions
    sess_user = np.repeat(np.arange(n), n_sess)
    sess_arche = arche[sess_user]
    n_ev = np.zeros(len(sess_user), dtype=np.int64)
    for a, spec in enumerate(specs):
        m = sess_arche == a
        if m.any():
            n_ev[m] = spec.events.sample(rng, int(m.sum()))
    last_sess = np.cumsum(n_sess) - 1
    n_ev[last_sess[purchased]] += 1
    token = rng.integers(1, 2**63 - 1, len(sess_user), dtype=np.int64)

    # events
    ev_sess = np.repeat(np.arange(len(sess_user)), n_ev)
    ev_user = sess_user[ev_sess]
    ev_arche = arche[ev_user]
    etype = np.zeros(len(ev_sess), dtype=np.int8)
    gap = np.zeros(len(ev_sess))
    for a, spec in enumerate(specs):
        m = ev_arche == a
        k = int(m.sum())
        if not k:
            continue
        cdf = np.cumsum(spec.action_probs())
        cdf[-1] = 1.0
        etype[m] = 1 + np.searchsorted(cdf, rng.random(k), side="right")
        gap[m] = spec.dwell_median * np.exp(spec.dwell_sigma * rng.standard_normal(k))
    ev_first_in_sess = np.r_[True, ev_sess[1:] != ev_sess[:-1]] if len(ev_sess) else np.zeros(0, bool)
    ev_first_in_user = np.r_[True, ev_user[1:] != ev_user[:-1]] if len(ev_sess) else np.zeros(0, bool)
    etype[ev_first_in_user] = EventType.VIEW
    ends = np.cumsum(n_ev) - 1
    etype[ends[last_sess[purchased]]] = EventType.PURCHASE
    sess_gap = np.zeros(len(sess_user))
    for a, spec in enumerate(specs):
        m = sess_arche == a
        if m.any():
            sess_gap[m] = rng.exponential(spec.session_gap_hours * 3600.0, int(m.sum()))
    gap = np.maximum(np.round(gap), 1.0)
    gap[ev_first_in_sess] = np.round(sess_gap[ev_sess[ev_first_in_sess]]) + 600.0
    gap[ev_first_in_user] = 0.0

    # per-user offsets, squeezed into the date range when too long
    csum = np.cumsum(gap)
    user_start = np.flatnonzero(ev_first_in_user)
    offsets = csum - np.repeat(csum[user_start], np.diff(np.r_[user_start, len(csum)]))
    span_user = np.zeros(n)
    np.maximum.at(span_user, ev_user, offsets)
    width = hi - lo
    scale = np.where(span_user > width, width / np.maximum(span_user, 1.0), 1.0)
    offsets = np.floor(offsets * scale[ev_user])
    start = lo + np.floor(rng.random(n) * (width - np.minimum(span_user, width) + 1))
    time = (start[ev_user] + offsets).astype(np.int64)
    seq = np.arange(len(ev_sess)) - np.repeat(user_start, np.diff(np.r_[user_start, len(csum)]))

    events = EventArrays(
        time,
        etype,
        users[ev_user],
        token[ev_sess],
        product[ev_user],
        category[ev_user],
        brand[ev_user],
        price[ev_user],
        seq.astype(np.int64),
    )
    return _Block(events, users, arche, product, purchased)


def _assign(specs, n_users: int, rng) -> np.ndarray:
    shares = np.array([s.share for s in specs])
    return rng.choice(len(specs), size=n_users, p=shares / shares.sum())


def generate_arrays(specs: Sequence[ArchetypeSpec], n_users: int, date_range=DEFAULT_RANGE, seed: int = 42):
    """Sorted :class:`EventArrays` plus the ground truth for ``n_users`` users."""
    check_specs(specs)
    if n_users < 0:
        raise ValueError("n_users must be >= 0")
    lo, hi = _epoch(date_range[0]), _epoch(date_range[1]) - 1
    if hi <= lo:
        raise ValueError("empty date range")
    root = np.random.SeedSequence(seed)
    arche = _assign(specs, n_users, np.random.default_rng(root.spawn(1)[0]))
    n_blocks = -(-n_users // BLOCK_USERS)
    streams = np.random.SeedSequence(seed, spawn_key=(1,)).spawn(n_blocks)
    blocks = []
    for b, ss in enumerate(streams):
        u = np.arange(b * BLOCK_USERS, min(n_users, (b + 1) * BLOCK_USERS))
        blocks.append(_gen_block(specs, arche[u], u, lo, hi, np.random.default_rng(ss)))
    if blocks:
        events = EventArrays.concat([b.events for b in blocks]).sorted()
        product = np.concatenate([b.product for b in blocks])
        purchased = np.concatenate([b.purchased for b in blocks])
    else:
        events = EventArrays(*(np.zeros(0, dtype=t) for t in (np.int64, np.int8, np.int64, np.int64, np.int64, np.int64, np.int64, float, np.int64)))
        product = np.zeros(0, dtype=np.int64)
        purchased = np.zeros(0, dtype=bool)
    truth = GroundTruth(
        [str(USER_ID_BASE + u) for u in range(n_users)],
        [str(p) for p in product],
        [specs[a].name for a in arche],
        purchased.astype(np.int64),
        planted_pr(specs),
        list(specs),
    )
    return events, truth


def _categories(electronics: bool):
    if electronics:
        codes = ["electronics.smartphone", "electronics.audio.headphone", "electronics.video.tv", "electronics.tablet"]
    else:
        codes = [None]
    return codes


def to_raw_events(arr: EventArrays, electronics: bool = False) -> list[RawEvent]:
    codes = _categories(electronics)
    out = []
    for i in range(len(arr)):
        cat = int(arr.category[i])
        out.append(
            RawEvent(
                int(arr.time[i]),
                EventType(int(arr.etype[i])),
                str(int(arr.product[i])),
                str(2_053_013_552_000_000_000 + cat),
                codes[cat % len(codes)],
                f"brand{int(arr.brand[i])}",
                float(arr.price[i]),
                str(USER_ID_BASE + int(arr.user[i])),
                format(int(arr.session[i]), "016x"),
            )
        )
    return out


def generate(specs: Sequence[ArchetypeSpec], n_users: int, date_range=DEFAULT_RANGE, seed: int = 42, electronics: bool = False):
    """Events (time-ordered :class:`RawEvent` list) and :class:`GroundTruth`."""
    arr, truth = generate_arrays(specs, n_users, date_range, seed)
    return to_raw_events(arr, electronics), truth


_LABELS = {int(t): t.label for t in EventType}


def write_arrays(path: str | Path, arr: EventArrays, electronics: bool = False, chunk: int = 500_000) -> int:
    """Write a sorted event table in the standard file layout without building event objects."""
    codes = np.array([c or "" for c in _categories(electronics)], dtype=object)
    labels = np.array(["", *(_LABELS[i] for i in range(1, 5))], dtype=object)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(COLUMNS) + "\n")
        for s in range(0, len(arr), chunk):
            part = arr.take(slice(s, s + chunk))
            stamp = np.datetime_as_string(part.time.astype("datetime64[s]"), unit="s")
            frame = pd.DataFrame(
                {
                    "event_time": pd.Series(stamp).str.replace("T", " ", regex=False) + " UTC",
                    "event_type": labels[part.etype],
                    "product_id": part.product,
                    "category_id": 2_053_013_552_000_000_000 + part.category,
                    "category_code": codes[part.category % len(codes)],
                    "brand": pd.Series(part.brand).map("brand{}".format),
                    "price": part.price,
                    "user_id": USER_ID_BASE + part.user,
                    "user_session": pd.Series(part.session).map("{:016x}".format),
                }
            )
            frame.to_csv(fh, header=False, index=False, lineterminator="\n")
    return len(arr)


def write_synthetic(
    path: str | Path,
    specs: Sequence[ArchetypeSpec],
    n_users: int,
    date_range=DEFAULT_RANGE,
    seed: int = 42,
    electronics: bool = False,
    max_events: int | None = None,
) -> GroundTruth:
    """Event file plus ``<path>.truth.json``; ``max_events`` keeps only the earliest events."""
    arr, truth = generate_arrays(specs, n_users, date_range, seed)
    if max_events is not None and len(arr) > max_events:
        arr = arr.take(slice(0, max_events))
    n = write_arrays(path, arr, electronics)
    meta = {
        "seed": seed,
        "n_users": n_users,
        "events": n,
        "truncated": max_events is not None and n == max_events,
        "date_range": list(map(str, date_range)),
        "planted_pr": truth.planted_pr,
        "realized_pr": truth.realized_pr,
        "archetypes": [asdict(s) for s in specs],
    }
    if n_users <= 200_000:
        meta["per_journey"] = truth.to_dict()["per_journey"]
    Path(str(path) + ".truth.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    log.info("wrote %d synthetic events for %d users to %s", n, n_users, path)
    return truth


def users_for_events(specs: Sequence[ArchetypeSpec], n_events: int) -> int:
    """Users needed so the event count reaches ``n_events`` with a 4-sigma margin."""
    mean = var_mix = 0.0
    for s in specs:
        pmf_s, pmf_e = s.sessions.pmf(), s.events.pmf()
        ks = np.arange(s.sessions.lo, s.sessions.hi + 1)
        ke = np.arange(s.events.lo, s.events.hi + 1)
        var_s = float(np.dot(pmf_s, ks**2)) - s.sessions.mean() ** 2
        var_e = float(np.dot(pmf_e, ke**2)) - s.events.mean() ** 2
        m = s.mean_events() + s.purchase_prob
        v = s.sessions.mean() * var_e + var_s * s.events.mean() ** 2 + s.purchase_prob * (1 - s.purchase_prob)
        mean += s.share * m
        var_mix += s.share * (v + m * m)
    sd = math.sqrt(max(var_mix - mean * mean, 0.0))
    n = n_events / mean
    for _ in range(3):
        n = (n_events + 4.0 * sd * math.sqrt(n)) / mean
    return int(math.ceil(n)) + 1


# --------------------------------------------------------------------------
# presets

_B = BoundedInt

PRESETS: dict[str, list[ArchetypeSpec]] = {
    "cosmetics-like": [
        ArchetypeSpec("NewShoppers", 0.80, _B(1, 3, 0.6), _B(1, 5, 0.45), 0.85, 0.12, 0.03, 2.0, 15.0, 0.095, 20.0),
        ArchetypeSpec("ImpulsiveInquisitive", 0.08, _B(1, 3, 0.5), _B(2, 8, 0.3), 0.60, 0.30, 0.10, 5.0, 30.0, 0.18, 15.0),
        ArchetypeSpec("IntentionalDecisive", 0.06, _B(2, 4, 0.4), _B(3, 10, 0.25), 0.50, 0.40, 0.10, 10.0, 40.0, 0.20, 40.0),
        ArchetypeSpec("ReturningDecisive", 0.04, _B(4, 10, 0.2), _B(3, 12, 0.2), 0.45, 0.45, 0.10, 5.0, 25.0, 0.30, 30.0),
        ArchetypeSpec("EducatedPerusing", 0.02, _B(3, 8, 0.3), _B(8, 20, 0.1), 0.80, 0.15, 0.05, 20.0, 80.0, 0.18, 60.0),
    ],
    "electronics-like": [
        ArchetypeSpec("NewShoppers", 0.80, _B(1, 3, 0.6), _B(1, 4, 0.5), 0.92, 0.08, 0.0, 20.0, 300.0, 0.007, 25.0),
        ArchetypeSpec("ImpulsiveInquisitive", 0.08, _B(1, 3, 0.5), _B(2, 6, 0.3), 0.75, 0.25, 0.0, 20.0, 200.0, 0.015, 15.0),
        ArchetypeSpec("IntentionalDecisive", 0.06, _B(2, 4, 0.4), _B(2, 8, 0.3), 0.65, 0.35, 0.0, 50.0, 500.0, 0.02, 45.0),
        ArchetypeSpec("ReturningDecisive", 0.04, _B(3, 8, 0.25), _B(2, 8, 0.25), 0.60, 0.40, 0.0, 50.0, 400.0, 0.03, 35.0),
        ArchetypeSpec("BrandShoppers", 0.02, _B(3, 8, 0.3), _B(5, 15, 0.15), 0.85, 0.15, 0.0, 400.0, 1500.0, 0.02, 70.0),
    ],
    # well separated behaviour; purchase ratio rises as the archetype gets rarer
    "table-vi-like": [
        ArchetypeSpec("NewShoppers", 0.80, _B(1, 1), _B(1, 2, 0.6), 0.90, 0.10, 0.0, 5.0, 10.0, 0.08, 20.0),
        ArchetypeSpec("ImpulsiveInquisitive", 0.10, _B(2, 2), _B(4, 6, 0.3), 0.60, 0.30, 0.10, 20.0, 30.0, 0.16, 20.0),
        ArchetypeSpec("IntentionalDecisive", 0.05, _B(3, 4, 0.5), _B(8, 10, 0.3), 0.50, 0.40, 0.10, 40.0, 50.0, 0.26, 30.0),
        ArchetypeSpec("EducatedPerusing", 0.03, _B(6, 7, 0.5), _B(3, 4, 0.5), 0.80, 0.15, 0.05, 60.0, 70.0, 0.36, 30.0),
        ArchetypeSpec("ReturningDecisive", 0.02, _B(9, 10, 0.5), _B(12, 14, 0.4), 0.45, 0.45, 0.10, 90.0, 100.0, 0.50, 40.0),
    ],
}

ELECTRONICS_PRESETS = {"electronics-like"}


def preset(name: str) -> list[ArchetypeSpec]:
    try:
        return list(PRESETS[name])
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


# --------------------------------------------------------------------------
# targeted datasets


def planted_journey_matrix(n: int = 20_000, seed: int = 42, noise_columns: int = 3):
    """Journey-level design matrix with a planted logistic label.

    ``P(y=1 | x) = sigmoid(2 x0 + 0.3 x1)`` where ``x0`` is a three-part
    mixture: most rows sit far on the negative side, a band of rows sits
    just below the 0.5 boundary (where roughly a third are positive) and a
    separable group sits well above it. Positives are about one in eight.
    Returns (X, y, column names).
    """
    rng = np.random.default_rng(seed)
    part = rng.choice(3, size=n, p=[0.77, 0.14, 0.09])
    x0 = np.empty(n)
    x0[part == 0] = rng.normal(-4.0, 0.5, (part == 0).sum())
    x0[part == 1] = rng.uniform(-0.9, -0.15, (part == 1).sum())
    x0[part == 2] = rng.normal(2.5, 0.3, (part == 2).sum())
    x1 = rng.normal(0.0, 1.0, n)
    s = 2.0 * x0 + 0.3 * x1
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-s))).astype(np.int64)
    cols = [x0, x1] + [rng.normal(0.0, 1.0, n) for _ in range(noise_columns)]
    names = ["signal", "aux"] + [f"noise{i}" for i in range(noise_columns)]
    return np.column_stack(cols), y, names


def price_signal_events(n_users: int = 600, seed: int = 42, buyer_share: float = 0.3, date_range=DEFAULT_RANGE) -> list[RawEvent]:
    """Session streams where the purchase signal lives in prices, not event codes.

    Buyers browse expensive products and purchase in most sessions; other
    users browse cheap products and rarely purchase. Event-code mixes of
    the two groups differ only slightly.
    """
    rng = np.random.default_rng(seed)
    lo = _epoch(date_range[0])
    events = []
    for u in range(n_users):
        buyer = rng.random() < buyer_share
        uid = str(USER_ID_BASE + u)
        t = lo + int(rng.integers(0, 86400 * 60))
        n_sess = int(rng.integers(4, 9))
        cart_p = 0.26 if buyer else 0.22
        for s in range(n_sess):
            sid = f"{u:08d}{s:02d}" + format(int(rng.integers(0, 2**31)), "08x")
            prods = [(str(int(rng.integers(1_000_000, 9_999_999))),
                      round(float(rng.uniform(150, 300) if buyer else rng.uniform(10, 120)), 2))
                     for _ in range(int(rng.integers(1, 4)))]
            for _ in range(int(rng.integers(2, 7))):
                pid, price = prods[int(rng.integers(len(prods)))]
                r = rng.random()
                et = EventType.VIEW if r >= cart_p + 0.05 else (EventType.CART if r >= 0.05 else EventType.REMOVE_FROM_CART)
                events.append(RawEvent(t, et, pid, None, None, f"brand{int(rng.integers(20))}", price, uid, sid))
                t += int(rng.lognormal(3.0, 0.8)) + 1
            if rng.random() < (0.8 if buyer else 0.03):
                pid, price = prods[0]
                events.append(RawEvent(t, EventType.PURCHASE, pid, None, None, "brand0", price, uid, sid))
                t += 30
            t += int(rng.exponential(86400 * 2)) + 3600
    events.sort(key=lambda e: (e.event_time, e.user_id))
    return events



def planted_blobs(n: int, k: int = 5, dim: int = 6, separation: float = 6.0, seed: int = 42, sizes=None):
    """Isotropic unit-variance Gaussian groups whose centres are pairwise ``separation`` apart.

    Centres sit on scaled coordinate axes, so every pair is equidistant.
    Returns (X, labels).
    """
    if dim < k:
        raise ValueError("dim must be >= k for equidistant centres")
    rng = np.random.default_rng(seed)
    if sizes is None:
        sizes = [n // k + (1 if i < n % k else 0) for i in range(k)]
    centres = np.eye(k, dim) * (separation / math.sqrt(2.0))
    labels = np.repeat(np.arange(k), sizes)
    X = centres[labels] + rng.standard_normal((len(labels), dim))
    perm = rng.permutation(len(labels))
    return X[perm], labels[perm]
