"""Independent brute-force references used by several test modules."""

from __future__ import annotations

import datetime as dt
import itertools
import math

import numpy as np

from clickjourney.ingest import EventType

_BINS = [(0, 5, 0), (5, 8, 1), (8, 12, 2), (12, 13, 3), (13, 17, 4), (17, 21, 5), (21, 24, 6)]


def tod(hour):
    return next(code for lo, hi, code in _BINS if lo <= hour < hi)


def calendar(epoch):
    t = dt.datetime.utcfromtimestamp(epoch)
    return {"DayOfWeek": t.weekday(), "TimeOfDay": tod(t.hour), "Year": t.year, "Month": t.month,
            "Weekend": int(t.weekday() in (5, 6))}


def naive_sessions(events):
    """Re-scan the whole stream once per session id."""
    out = {}
    ids = sorted({e.user_session for e in events if e.user_session is not None})
    for sid in ids:
        mine = [(e.event_time, i, e) for i, e in enumerate(events) if e.user_session == sid]
        first = min(mine, key=lambda r: (r[0], r[1]))[2]
        last_t = max(r[0] for r in mine)
        rows = [r[2] for r in mine]
        rec = {"session_id": sid, "user_id": first.user_id, "start_time": first.event_time,
               "TotalEventsInSession": len(rows), "interactionTime": last_t - first.event_time}
        for kind, word in ((EventType.CART, "Carted"), (EventType.VIEW, "Viewed"), (EventType.REMOVE_FROM_CART, "Removed")):
            sel = [e for e in rows if e.event_type == kind]
            total = math.fsum(e.price for e in sel)
            rec[f"NumTimes{word}InSession"] = len(sel)
            rec[f"AvgAmt{word}InSession"] = total / len(sel) if sel else 0.0
            rec[f"NumBrands{word}InSession"] = len({e.brand for e in sel if e.brand is not None})
            rec[f"OverallAmtUser{word}"] = total
            rec[f"NumProds{word}InSession"] = len({e.product_id for e in sel})
        rec.update(calendar(first.event_time))
        rec["purchased"] = int(any(e.event_type == EventType.PURCHASE for e in rows))
        out[sid] = rec
    return out


def naive_journeys(events):
    out = {}
    keys = sorted({(e.user_id, e.product_id) for e in events})
    for key in keys:
        rows = [e for e in events if (e.user_id, e.product_id) == key]
        times = [e.event_time for e in rows]
        rec = {"user_id": key[0], "product_id": key[1], "last_time": max(times),
               "NumOfEventsInJourney": len(rows), "NumSessions": len({e.user_session for e in rows}),
               "interactionTime": max(times) - min(times)}
        for kind, name in ((EventType.CART, "Cart"), (EventType.VIEW, "View"), (EventType.REMOVE_FROM_CART, "Remove"),
                           (EventType.PURCHASE, "Purchase")):
            rec[f"Num{name}"] = sum(e.event_type == kind for e in rows)
        rec["minPrice"] = min(e.price for e in rows)
        rec["maxPrice"] = max(e.price for e in rows)
        for kind, name in ((EventType.CART, "Cart"), (EventType.VIEW, "View"), (EventType.REMOVE_FROM_CART, "Remove")):
            per = [math.fsum(e.price for e in rows if e.user_session == s and e.event_type == kind)
                   for s in {e.user_session for e in rows}]
            rec[f"Insession{name}"] = max(per + [0.0])
        rec.update(calendar(max(times)))
        rec["purchased"] = int(rec["NumPurchase"] > 0)
        out[key] = rec
    return out


def fields_equal(record, expected: dict) -> list[str]:
    """Names of fields that differ (floats compared bit-exactly)."""
    bad = []
    for k, v in expected.items():
        got = getattr(record, k)
        if isinstance(v, float) or isinstance(got, float):
            if float(got).hex() != float(v).hex():
                bad.append(k)
        elif got != v:
            bad.append(k)
    return bad


def best_partition_distortion(X, k):
    """Minimum within-cluster squared error over every labelling into at most k clusters."""
    X = np.asarray(X, dtype=float)
    n = len(X)
    best = math.inf
    # fix the first point's label to 0 to cut symmetric duplicates
    for rest in itertools.product(range(k), repeat=n - 1):
        labels = (0,) + rest
        if len(set(labels)) != k:
            continue
        lab = np.array(labels)
        d = sum(((X[lab == c] - X[lab == c].mean(axis=0)) ** 2).sum() for c in range(k))
        best = min(best, d)
    return best


def knn_brute(X_train, y_train, X_query, k):
    out = []
    for q in X_query:
        d = [(float(((x - q) ** 2).sum()), i) for i, x in enumerate(X_train)]
        d.sort()
        votes = sum(y_train[i] for _, i in d[:k])
        out.append(int(2 * votes > k))
    return np.array(out)


def on_some_segment(point, base_rows, candidates, tol=1e-9):
    """True if ``point`` lies on a segment from some base row to one of its candidate rows."""
    for b, nbrs in zip(base_rows, candidates):
        for nb in nbrs:
            d = nb - b
            dd = float(d @ d)
            if dd == 0:
                if np.allclose(point, b, atol=tol):
                    return True
                continue
            u = float((point - b) @ d) / dd
            if -tol <= u <= 1 + tol and np.allclose(b + u * d, point, atol=tol * (1 + np.abs(point).max())):
                return True
    return False
