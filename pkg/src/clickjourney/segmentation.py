"""Journey segmentation: k-means with an elbow rule, exact t-SNE, cluster reports."""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# k-means


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = np.zeros((len(X), len(C)))
    for j in range(X.shape[1]):
        diff = X[:, j : j + 1] - C[:, j]
        d += diff * diff
    return d


def kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    closest = _sq_dists(X, centers[0][None])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            i = int(rng.integers(n))
        else:
            i = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            i = min(i, n - 1)
        centers.append(X[i])
        closest = np.minimum(closest, _sq_dists(X, X[i][None])[:, 0])
    return np.array(centers)


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    distortion: float
    history: list[float] = field(default_factory=list)
    iterations: int = 0


def _lloyd(X, centers, max_iter):
    history = []
    assign = None
    for it in range(1, max_iter + 1):
        d = _sq_dists(X, centers)
        new = np.argmin(d, axis=1)
        history.append(float(d[np.arange(len(X)), new].sum()))
        if assign is not None and np.array_equal(new, assign):
            return new, centers, history, it
        assign = new
        centers = centers.copy()
        for c in range(len(centers)):
            members = assign == c
            if members.any():
                centers[c] = X[members].mean(axis=0)
            else:
                # empty cluster: re-seed at the point farthest from its centroid
                far = int(np.argmax(d[np.arange(len(X)), assign]))
                centers[c] = X[far]
                assign = assign.copy()
                assign[far] = c
    d = _sq_dists(X, centers)
    assign = np.argmin(d, axis=1)
    history.append(float(d[np.arange(len(X)), assign].sum()))
    return assign, centers, history, max_iter


def _transfer_costs(x, a, sizes, centers):
    """Cost of removing ``x`` from cluster ``a`` and of adding it to each cluster."""
    d = ((centers - x) ** 2).sum(axis=1)
    remove = sizes[a] / (sizes[a] - 1) * d[a] if sizes[a] > 1 else np.inf
    add = sizes / (sizes + 1) * d
    add[a] = np.inf
    return remove, add


def _hartigan(X, assign, centers, history, max_pass=100):
    """Single-point transfers that strictly lower distortion, applied until none remain.

    Lloyd fixed points are not always transfer-stable; each pass screens every
    point against the current centroids at once and re-checks candidates one by
    one as centroids move.
    """
    k = len(centers)
    assign = assign.copy()
    sizes = np.bincount(assign, minlength=k).astype(float)
    sums = np.zeros_like(centers)
    np.add.at(sums, assign, X)
    centers = np.where(sizes[:, None] > 0, sums / np.maximum(sizes, 1)[:, None], centers)
    idx = np.arange(len(X))
    for _ in range(max_pass):
        d = _sq_dists(X, centers)
        own = sizes[assign]
        remove = np.where(own > 1, own / np.maximum(own - 1, 1) * d[idx, assign], np.inf)
        add = sizes / (sizes + 1) * d
        add[idx, assign] = np.inf
        gain = remove - add.min(axis=1)
        cand = np.flatnonzero((gain > 1e-12 * np.maximum(remove, 1e-300)) & np.isfinite(remove))
        moved = 0
        for i in cand[np.argsort(-gain[cand], kind="stable")]:
            a = assign[i]
            rm, ad = _transfer_costs(X[i], a, sizes, centers)
            b = int(np.argmin(ad))
            if not (np.isfinite(rm) and ad[b] < rm * (1 - 1e-12)):
                continue
            sums[a] -= X[i]
            sums[b] += X[i]
            sizes[a] -= 1
            sizes[b] += 1
            centers[a] = sums[a] / sizes[a]
            centers[b] = sums[b] / sizes[b]
            assign[i] = b
            moved += 1
        if not moved:
            break
        # recompute from scratch so accumulated update error does not drift
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, X)
        centers = np.where(sizes[:, None] > 0, sums / np.maximum(sizes, 1)[:, None], centers)
        history.append(float(_sq_dists(X, centers)[idx, assign].sum()))
    return assign, centers, history


def kmeans(X, k: int, seed: int = 42, n_init: int = 30, max_iter: int = 300) -> KMeansResult:
    """k-means++ seeding, Lloyd iterations until assignments stop changing, then
    single-point transfer refinement.

    The best of ``n_init`` seeded restarts (lowest distortion) is returned;
    ``history`` is its distortion after each assignment step and each transfer pass.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if k < 1 or k > n:
        raise ValueError(f"k={k} invalid for {n} points")
    best = None
    for ss in np.random.SeedSequence(seed).spawn(n_init):
        rng = np.random.default_rng(ss)
        assign, centers, history, it = _lloyd(X, kmeans_pp(X, k, rng), max_iter)
        assign, centers, history = _hartigan(X, assign, centers, history)
        dist = float(_sq_dists(X, centers)[np.arange(n), assign].sum())
        if best is None or dist < best.distortion:
            best = KMeansResult(assign, centers, dist, history, it)
    return best


def distortion(X, assignments, centroids) -> float:
    X = np.asarray(X, dtype=np.float64)
    return float(((X - centroids[assignments]) ** 2).sum())


@dataclass
class ElbowResult:
    k: int
    ks: list[int]
    distortions: list[float]
    no_knee: bool = False

    def csv(self) -> str:
        return "k,distortion\n" + "".join(f"{k},{d!r}\n" for k, d in zip(self.ks, self.distortions))


def knee_from_curve(ks: Sequence[int], d: Sequence[float]) -> tuple[int, bool]:
    """Interior k with the largest discrete second difference of distortion."""
    ks = list(ks)
    d = np.asarray(d, dtype=np.float64)
    if len(ks) < 3:
        return ks[0], True
    second = d[:-2] - 2 * d[1:-1] + d[2:]
    scale = max(abs(d[0]), 1.0)
    i = int(np.argmax(second))
    if second[i] <= 1e-12 * scale:
        return ks[0], True
    return ks[i + 1], False


def elbow_k(X, k_range=range(1, 11), seed: int = 42, n_init: int = 30) -> ElbowResult:
    X = np.asarray(X, dtype=np.float64)
    ks = list(k_range)
    if ks[0] < 1 or ks[-1] > len(X):
        raise ValueError("k_range outside [1, n]")
    dists = [kmeans(X, k, seed, n_init).distortion for k in ks]
    k, flag = knee_from_curve(ks, dists)
    return ElbowResult(k, ks, dists, flag)


# --------------------------------------------------------------------------
# t-SNE


def _entropy_and_p(d_row: np.ndarray, beta: np.ndarray):
    """Row-wise conditional distribution exp(-beta d) and its entropy (nats)."""
    logits = -d_row * beta[:, None]
    logits -= logits.max(axis=1, keepdims=True)
    P = np.exp(logits)
    Z = P.sum(axis=1, keepdims=True)
    P /= Z
    with np.errstate(divide="ignore", invalid="ignore"):
        H = -np.sum(np.where(P > 0, P * np.log(P), 0.0), axis=1)
    return P, H


def conditional_probabilities(D: np.ndarray, perplexity: float, tol: float = 1e-5, max_iter: int = 200):
    """Per-row Gaussian bandwidths by bisection so each row's entropy is log(perplexity).

    ``D`` holds squared distances. Returns (P conditional (n, n) with zero
    diagonal, beta = 1 / (2 sigma^2), row entropies).
    """
    n = len(D)
    target = np.log(perplexity)
    mask = ~np.eye(n, dtype=bool)
    Doff = D[mask].reshape(n, n - 1)
    beta = np.ones(n)
    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    P, H = _entropy_and_p(Doff, beta)
    for _ in range(max_iter):
        diff = H - target
        if np.all(np.abs(diff) < tol):
            break
        # entropy too high -> distribution too flat -> increase beta
        up = diff > 0
        lo = np.where(up, beta, lo)
        hi = np.where(up, hi, beta)
        beta = np.where(np.isinf(hi), beta * 2.0, (lo + hi) / 2.0)
        P, H = _entropy_and_p(Doff, beta)
    full = np.zeros((n, n))
    full[mask] = P.ravel()
    return full, beta, H


def joint_probabilities(X: np.ndarray, perplexity: float) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    D = _sq_dists(X, X)
    Pc, _, H = conditional_probabilities(D, perplexity)
    P = (Pc + Pc.T) / (2.0 * len(X))
    P /= P.sum()
    return P, H


def kl_divergence(P: np.ndarray, Y: np.ndarray) -> float:
    num = 1.0 / (1.0 + _sq_dists(Y, Y))
    np.fill_diagonal(num, 0.0)
    Q = np.maximum(num / num.sum(), 1e-300)
    m = P > 0
    return float(np.sum(P[m] * np.log(P[m] / Q[m])))


@dataclass
class TsneResult:
    embedding: np.ndarray
    rows: np.ndarray  # indices into the input that were embedded
    kl_log: dict[int, float]
    entropies: np.ndarray
    P: np.ndarray


def tsne(
    X,
    perplexity: float = 30.0,
    iterations: int = 1000,
    seed: int = 42,
    sample_cap: int = 5000,
    learning_rate: float = 200.0,
    exaggeration: float = 4.0,
    exaggeration_iters: int = 100,
    momentum_switch: int = 250,
    log_every: int = 50,
) -> TsneResult:
    """Exact t-SNE to two dimensions.

    Rows beyond ``sample_cap`` are dropped by a seeded uniform subsample.
    Gradient descent uses momentum 0.5 then 0.8 (after ``momentum_switch``),
    per-coordinate adaptive gains, and early exaggeration for the first
    ``exaggeration_iters`` iterations.
    """
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(seed)
    rows = np.arange(len(X))
    if len(X) > sample_cap:
        rows = np.sort(rng.choice(len(X), sample_cap, replace=False))
        X = X[rows]
    n = len(X)
    if 3 * perplexity >= n:
        raise ValueError(f"n={n} too small for perplexity {perplexity}")
    P, H = joint_probabilities(X, perplexity)
    Y = rng.normal(0.0, 1e-4, (n, 2))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    kl_log = {}
    for it in range(1, iterations + 1):
        ex = exaggeration if it <= exaggeration_iters else 1.0
        num = 1.0 / (1.0 + _sq_dists(Y, Y))
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-12)
        PQ = (ex * P - Q) * num
        grad = 4.0 * (PQ.sum(axis=1)[:, None] * Y - PQ @ Y)
        mom = 0.5 if it <= momentum_switch else 0.8
        same = (grad > 0) == (update > 0)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = mom * update - learning_rate * gains * grad
        Y = Y + update
        Y -= Y.mean(axis=0)
        if it % log_every == 0 or it == iterations:
            kl_log[it] = kl_divergence(P, Y)
    return TsneResult(Y, rows, kl_log, H, P)


# --------------------------------------------------------------------------
# reports


class ArchetypeTag(enum.Enum):
    NewShoppers = "New Shoppers"
    ImpulsiveInquisitive = "Impulsive/Inquisitive Shoppers"
    IntentionalDecisive = "Intentional/Decisive Shoppers"
    ReturningDecisive = "Returning Decisive Shoppers"
    BrandShoppers = "Brand Shoppers"
    EducatedPerusing = "Educated Perusing Shoppers"


@dataclass
class ClusterStats:
    cluster_id: int
    size: int
    purchases: int
    rep: float  # percent of all journeys
    pr: float  # percent of this cluster's journeys with a purchase
    mean_purchase: dict[str, float]
    mean_no_purchase: dict[str, float]
    mean_all: dict[str, float]
    tag: ArchetypeTag | None = None


@dataclass
class ClusterReport:
    clusters: list[ClusterStats]  # ordered by descending Rep
    total: int
    total_purchases: int
    features: list[str]

    @property
    def overall_pr(self) -> float:
        return 100.0 * self.total_purchases / self.total if self.total else 0.0

    def exact_weighted_pr(self) -> Fraction:
        """Rep-weighted mean of cluster PRs as an exact fraction of journeys."""
        return sum((Fraction(c.size, self.total) * Fraction(c.purchases, c.size) for c in self.clusters if c.size), Fraction(0))

    def by_id(self, cid: int) -> ClusterStats:
        return next(c for c in self.clusters if c.cluster_id == cid)

    def to_dict(self) -> dict:
        return {
            "overall_pr": self.overall_pr,
            "total": self.total,
            "total_purchases": self.total_purchases,
            "features": self.features,
            "clusters": [
                {
                    "cluster_id": c.cluster_id,
                    "size": c.size,
                    "purchases": c.purchases,
                    "rep": c.rep,
                    "pr": c.pr,
                    "tag": c.tag.value if c.tag else None,
                    "mean_purchase": c.mean_purchase,
                    "mean_no_purchase": c.mean_no_purchase,
                }
                for c in self.clusters
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        """Rep / PR rows followed by per-feature purchase vs no-purchase means."""
        ids = [c.cluster_id for c in self.clusters]
        w = 12
        lines = [
            "Rep(%)".ljust(24) + "".join(f"{c.rep:>{w}.2f}" for c in self.clusters),
            "PR(%)".ljust(24) + "".join(f"{c.pr:>{w}.2f}" for c in self.clusters),
            "Cluster ID".ljust(24) + "".join(f"{i:>{w}}" for i in ids),
            "Tag".ljust(24) + "".join(f"{(c.tag.name if c.tag else '-')[:w - 1]:>{w}}" for c in self.clusters),
            "",
            "Feature (P / NP)".ljust(24) + "".join(f"{f'{i} P':>{w}}{f'{i} NP':>{w}}" for i in ids),
        ]
        for f in self.features:
            cells = "".join(f"{c.mean_purchase[f]:>{w}.2f}{c.mean_no_purchase[f]:>{w}.2f}" for c in self.clusters)
            lines.append(f[:23].ljust(24) + cells)
        return "\n".join(lines)


def _means(frame: pd.DataFrame, features) -> dict[str, float]:
    if len(frame) == 0:
        return {f: 0.0 for f in features}
    return {f: float(frame[f].mean()) for f in features}


def cluster_report(assignments, journeys: pd.DataFrame, features: Sequence[str]) -> ClusterReport:
    """Rep, PR and purchase / no-purchase feature means per cluster."""
    assignments = np.asarray(assignments)
    if len(assignments) != len(journeys):
        raise ValueError("one assignment per journey required")
    frame = journeys.reset_index(drop=True)
    labels = frame["purchased"].to_numpy().astype(np.int64)
    n = len(frame)
    extra = [c for c in ("NumCart", "NumSessions", "NumView", "minPrice", "maxPrice", "interactionTime") if c in frame]
    cols = list(dict.fromkeys(list(features) + extra))
    stats = []
    for cid in np.unique(assignments):
        m = assignments == cid
        sub = frame[m]
        size = int(m.sum())
        buys = int(labels[m].sum())
        stats.append(
            ClusterStats(
                int(cid), size, buys,
                100.0 * size / n,
                100.0 * buys / size,
                _means(sub[sub["purchased"] == 1], features),
                _means(sub[sub["purchased"] == 0], features),
                _means(sub, cols),
            )
        )
    stats.sort(key=lambda c: (-c.size, c.cluster_id))
    return ClusterReport(stats, n, int(labels.sum()), list(features))


def _engagement(c: ClusterStats) -> tuple[float, float]:
    m = c.mean_all
    sessions = m.get("NumSessions", 1.0) or 1.0
    return m.get("interactionTime", 0.0), m.get("NumCart", 0.0) / sessions


def tag_archetypes(report: ClusterReport) -> ClusterReport:
    """Attach archetype tags by rule.

    1. largest Rep -> New Shoppers (ties: lower cluster id);
    2. highest PR among the rest -> Returning Decisive (ties: lower id);
    3. the rest, ranked by mean interaction time then carts per session:
       the top one is Brand Shoppers when its price level is above the
       overall mean and its view/cart ratio is not, otherwise Educated
       Perusing; the bottom one is Impulsive/Inquisitive; any in between
       are Intentional/Decisive.
    """
    cl = report.clusters
    if len(cl) < 2:
        raise ValueError("need at least 2 clusters")
    for c in cl:
        c.tag = None
    new = min(cl, key=lambda c: (-c.rep, c.cluster_id))
    new.tag = ArchetypeTag.NewShoppers
    rest = [c for c in cl if c is not new]
    ret = min(rest, key=lambda c: (-c.pr, c.cluster_id))
    ret.tag = ArchetypeTag.ReturningDecisive
    rest = [c for c in rest if c is not ret]
    if not rest:
        return report
    rest.sort(key=lambda c: (-_engagement(c)[0], -_engagement(c)[1], c.cluster_id))
    total = sum(c.size for c in cl)

    def overall(name):
        return sum(c.mean_all.get(name, 0.0) * c.size for c in cl) / total

    top = rest[0]
    price = top.mean_all.get("maxPrice", 0.0)
    views_per_cart = top.mean_all.get("NumView", 0.0) / max(top.mean_all.get("NumCart", 0.0), 1e-12)
    overall_vpc = overall("NumView") / max(overall("NumCart"), 1e-12)
    if price > overall("maxPrice") and views_per_cart <= overall_vpc:
        top.tag = ArchetypeTag.BrandShoppers
    else:
        top.tag = ArchetypeTag.EducatedPerusing
    if len(rest) >= 2:
        rest[-1].tag = ArchetypeTag.ImpulsiveInquisitive
        for c in rest[1:-1]:
            c.tag = ArchetypeTag.IntentionalDecisive
    return report
