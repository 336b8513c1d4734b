"""Parsing, cleaning and chunked streaming of raw clickstream event logs.

Input files are headered comma-delimited text in the Kaggle e-commerce
column order::

    event_time,event_type,product_id,category_id,category_code,brand,price,user_id,user_session
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

SCHEMA_VERSION = 1

COLUMNS = (
    "event_time",
    "event_type",
    "product_id",
    "category_id",
    "category_code",
    "brand",
    "price",
    "user_id",
    "user_session",
)
OPTIONAL_COLUMNS = ("category_id", "category_code", "brand")

TIME_SUFFIX = " UTC"
_EPOCH = dt.date(1970, 1, 1)


class EventType(enum.IntEnum):
    """Event kinds; the integer value doubles as the sequence-model event code."""

    VIEW = 1
    CART = 2
    REMOVE_FROM_CART = 3
    PURCHASE = 4

    @property
    def label(self) -> str:
        return _TYPE_LABELS[self]

    @classmethod
    def parse(cls, text: str) -> EventType:
        try:
            return _LABEL_TYPES[text]
        except KeyError:
            raise ValueError(f"unknown event type {text!r}") from None


_TYPE_LABELS = {
    EventType.VIEW: "view",
    EventType.CART: "cart",
    EventType.REMOVE_FROM_CART: "remove_from_cart",
    EventType.PURCHASE: "purchase",
}
_LABEL_TYPES = {v: k for k, v in _TYPE_LABELS.items()}


class ParseError(ValueError):
    """A malformed input row. ``row`` is the 0-based data row index."""

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


@dataclass(frozen=True, slots=True)
class RawEvent:
    """One log row. ``event_time`` is UTC epoch seconds."""

    event_time: int
    event_type: EventType
    product_id: str
    category_id: str | None
    category_code: str | None
    brand: str | None
    price: float
    user_id: str
    user_session: str | None

    @property
    def timestamp(self) -> dt.datetime:
        return dt.datetime.fromtimestamp(self.event_time, dt.timezone.utc)


# Date strings repeat heavily within a log; caching the day number keeps parsing cheap.
_day_cache: dict[str, int] = {}


def parse_timestamp(text: str) -> int:
    """Parse ``YYYY-MM-DD HH:MM:SS UTC`` into epoch seconds."""
    if len(text) != 23 or not text.endswith(TIME_SUFFIX) or text[10] != " ":
        raise ValueError(f"malformed timestamp {text!r}")
    day_text = text[:10]
    day = _day_cache.get(day_text)
    if day is None:
        day = (dt.date.fromisoformat(day_text) - _EPOCH).days
        if len(_day_cache) < 100_000:
            _day_cache[day_text] = day
    clock = text[11:19]
    if clock[2] != ":" or clock[5] != ":":
        raise ValueError(f"malformed timestamp {text!r}")
    h, m, s = int(clock[0:2]), int(clock[3:5]), int(clock[6:8])
    if h > 23 or m > 59 or s > 59:
        raise ValueError(f"malformed timestamp {text!r}")
    return day * 86400 + h * 3600 + m * 60 + s


def format_timestamp(epoch: int) -> str:
    return dt.datetime.fromtimestamp(epoch, dt.timezone.utc).strftime("%Y-%m-%d %H:%M:%S") + TIME_SUFFIX


def parse_event_row(record: Sequence[str], row: int = 0, schema: Sequence[str] = COLUMNS) -> RawEvent:
    """Turn one delimited record into a :class:`RawEvent`.

    ``schema`` gives the column order of ``record``. Empty optional fields
    become ``None``.
    """
    if len(record) != len(schema):
        raise ParseError(row, f"expected {len(schema)} fields, got {len(record)}")
    if schema is COLUMNS:
        t, etype, product, cat_id, cat_code, brand, price, user, session = record
    else:
        values = dict(zip(schema, record))
        try:
            t, etype, product, cat_id, cat_code, brand, price, user, session = (values[c] for c in COLUMNS)
        except KeyError as exc:
            raise ParseError(row, f"schema lacks column {exc.args[0]}") from None
    try:
        epoch = parse_timestamp(t)
    except ValueError as exc:
        raise ParseError(row, str(exc)) from None
    try:
        kind = _LABEL_TYPES[etype]
    except KeyError:
        raise ParseError(row, f"unknown event type {etype!r}") from None
    try:
        value = float(price)
    except ValueError:
        raise ParseError(row, f"non-numeric price {price!r}") from None
    if not math.isfinite(value):
        raise ParseError(row, f"non-finite price {price!r}")
    if not product:
        raise ParseError(row, "empty product_id")
    if not user:
        raise ParseError(row, "empty user_id")
    return RawEvent(
        epoch,
        kind,
        product,
        cat_id or None,
        cat_code or None,
        brand or None,
        value,
        user,
        session or None,
    )


def format_event_row(event: RawEvent) -> list[str]:
    """Inverse of :func:`parse_event_row` (``repr`` keeps prices round-trippable)."""
    return [
        format_timestamp(event.event_time),
        event.event_type.label,
        event.product_id,
        event.category_id or "",
        event.category_code or "",
        event.brand or "",
        repr(event.price),
        event.user_id,
        event.user_session or "",
    ]


# --------------------------------------------------------------------------
# cleaning


@dataclass(frozen=True)
class CleaningRules:
    drop_negative_price: bool = True
    require_session: bool = True
    category_filter: str | None = None
    require_brand_and_category: bool = False
    drop_columns: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "drop_columns", tuple(self.drop_columns))
        unknown = set(self.drop_columns) - set(OPTIONAL_COLUMNS)
        if unknown:
            raise ValueError(f"only optional columns can be dropped, got {sorted(unknown)}")
        # A predicate reading a dropped column would reject every row on a second pass.
        needs = set()
        if self.category_filter is not None:
            needs.add("category_code")
        if self.require_brand_and_category:
            needs.update(("category_code", "brand"))
        if needs & set(self.drop_columns):
            raise ValueError(f"rules read columns they also drop: {sorted(needs & set(self.drop_columns))}")

    def active(self) -> list[str]:
        """Row-rule names in the fixed order drops are attributed."""
        names = []
        if self.require_session:
            names.append("missing_session")
        if self.drop_negative_price:
            names.append("negative_price")
        if self.category_filter is not None:
            names.append("category_filter")
        if self.require_brand_and_category:
            names.append("missing_brand_or_category")
        return names

    def violation(self, e: RawEvent) -> str | None:
        if self.require_session and not e.user_session:
            return "missing_session"
        if self.drop_negative_price and e.price < 0:
            return "negative_price"
        if self.category_filter is not None and (
            e.category_code is None or self.category_filter not in e.category_code
        ):
            return "category_filter"
        if self.require_brand_and_category and (e.category_code is None or e.brand is None):
            return "missing_brand_or_category"
        return None

    def to_dict(self) -> dict:
        return {
            "drop_negative_price": self.drop_negative_price,
            "require_session": self.require_session,
            "category_filter": self.category_filter,
            "require_brand_and_category": self.require_brand_and_category,
            "drop_columns": list(self.drop_columns),
        }

    @classmethod
    def from_dict(cls, d: dict) -> CleaningRules:
        return cls(**{**d, "drop_columns": tuple(d.get("drop_columns", ()))})


PRESETS = {
    # brand and category_code are mostly null in the cosmetics log
    "cosmetics": CleaningRules(drop_columns=("category_code", "brand")),
    "electronics": CleaningRules(
        category_filter="electronics",
        require_brand_and_category=True,
        drop_columns=("category_id",),
    ),
    "none": CleaningRules(drop_negative_price=False, require_session=False),
}


@dataclass
class CleaningStats:
    rows_read: int = 0
    rows_dropped: dict[str, int] = field(default_factory=dict)
    rows_emitted: int = 0

    def reconciles(self) -> bool:
        return self.rows_emitted + sum(self.rows_dropped.values()) == self.rows_read

    def to_dict(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "rows_dropped": dict(self.rows_dropped),
            "rows_emitted": self.rows_emitted,
        }


def clean_events(
    events: Iterable[RawEvent], rules: CleaningRules, stats: CleaningStats | None = None
) -> tuple[Iterator[RawEvent], CleaningStats]:
    """Lazily filter ``events``; ``stats`` fills in as the iterator is consumed."""
    if stats is None:
        stats = CleaningStats()
    for name in rules.active():
        stats.rows_dropped.setdefault(name, 0)

    blank = {c: None for c in rules.drop_columns}

    def run():
        for e in events:
            stats.rows_read += 1
            bad = rules.violation(e)
            if bad is not None:
                stats.rows_dropped[bad] += 1
                continue
            if blank and any(getattr(e, c) is not None for c in blank):
                e = _replace(e, blank)
            stats.rows_emitted += 1
            yield e

    return run(), stats


def _replace(e: RawEvent, updates: dict) -> RawEvent:
    values = {name: getattr(e, name) for name in RawEvent.__slots__}
    values.update(updates)
    return RawEvent(**values)


# --------------------------------------------------------------------------
# streaming I/O


def _check_header(header: list[str] | None, path) -> list[str]:
    if header is None:
        raise ValueError(f"{path}: missing header")
    header = [h.strip() for h in header]
    if header and header[0] == "":
        # pandas-style unnamed index column
        header = header[1:]
    if sorted(header) != sorted(COLUMNS):
        raise ValueError(f"{path}: unreadable header {header!r}")
    return header


def iter_events(path: str | Path, skip_malformed: bool = False, errors: list | None = None) -> Iterator[RawEvent]:
    """Stream every event in ``path`` in file order."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        raw_header = next(reader, None)
        header = _check_header(raw_header, path)
        offset = len(raw_header) - len(header)
        schema = COLUMNS if tuple(header) == COLUMNS else tuple(header)
        for i, record in enumerate(reader):
            if offset:
                record = record[offset:]
            try:
                yield parse_event_row(record, i, schema)
            except ParseError as exc:
                if not skip_malformed:
                    raise
                if errors is not None:
                    errors.append(exc)


def read_chunks(path: str | Path, chunk_rows: int, skip_malformed: bool = False) -> Iterator[list[RawEvent]]:
    """Yield batches of at most ``chunk_rows`` parsed events."""
    if chunk_rows < 1:
        raise ValueError("chunk_rows must be positive")
    batch: list[RawEvent] = []
    for e in iter_events(path, skip_malformed=skip_malformed):
        batch.append(e)
        if len(batch) == chunk_rows:
            yield batch
            batch = []
    if batch:
        yield batch


def write_events(path: str | Path, events: Iterable[RawEvent]) -> int:
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for e in events:
            w.writerow(format_event_row(e))
            n += 1
    return n


def write_event_cache(path: str | Path, events: Iterable[RawEvent], rules: CleaningRules) -> CleaningStats:
    """Clean ``events`` into ``path`` plus a ``.meta.json`` sidecar."""
    path = Path(path)
    cleaned, stats = clean_events(events, rules)
    write_events(path, cleaned)
    meta = {
        "schema_version": SCHEMA_VERSION,
        "columns": list(COLUMNS),
        "rules": rules.to_dict(),
        "stats": stats.to_dict(),
    }
    sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return stats


def sidecar(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")
