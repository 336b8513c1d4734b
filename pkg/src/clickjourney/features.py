"""Feature ranking by Fisher score and random-forest Gini importance."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

FISHER_EPS = 1e-12


def _check_two_class(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y).astype(np.int64)
    if set(np.unique(y)) != {0, 1}:
        raise ValueError("need both classes present")
    return y


def fisher_scores(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Two-class Fisher score per column.

    F_j = (n0 (mu0 - mu)^2 + n1 (mu1 - mu)^2) / (n0 var0 + n1 var1 + eps)
    with population variances.
    """
    X = np.asarray(X, dtype=np.float64)
    y = _check_two_class(y)
    mu = X.mean(axis=0)
    num = np.zeros(X.shape[1])
    den = np.full(X.shape[1], FISHER_EPS)
    for c in (0, 1):
        Xc = X[y == c]
        n = len(Xc)
        num += n * (Xc.mean(axis=0) - mu) ** 2
        den += n * Xc.var(axis=0)
    return num / den


# --------------------------------------------------------------------------
# CART / random forest


@dataclass
class ForestParams:
    trees: int = 100
    max_depth: int = 8
    min_leaf: int = 5
    feature_subsample: int | None = None  # None: floor(sqrt(d))
    bootstrap: bool = True
    seed: int = 42


def _gini(pos: np.ndarray, n: np.ndarray) -> np.ndarray:
    p = pos / n
    return 2.0 * p * (1.0 - p)


def best_split(x: np.ndarray, y: np.ndarray, min_leaf: int) -> tuple[float, float] | None:
    """Best Gini split of one feature: (weighted impurity decrease per sample, threshold).

    Candidate thresholds are midpoints between consecutive distinct values
    that leave at least ``min_leaf`` samples on each side.
    """
    n = len(x)
    if n < 2 * min_leaf:
        return None
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    left_n = np.arange(1, n)
    left_pos = np.cumsum(ys)[:-1]
    total_pos = left_pos[-1] + ys[-1]
    valid = (xs[1:] != xs[:-1]) & (left_n >= min_leaf) & (n - left_n >= min_leaf)
    if not valid.any():
        return None
    ln, lp = left_n[valid], left_pos[valid]
    rn, rp = n - ln, total_pos - lp
    parent = _gini(np.array([total_pos]), np.array([n]))[0]
    child = (ln * _gini(lp, ln) + rn * _gini(rp, rn)) / n
    gain = parent - child
    i = int(np.argmax(gain))
    cut = np.flatnonzero(valid)[i]
    return float(gain[i]), 0.5 * (xs[cut] + xs[cut + 1])


class _Tree:
    def __init__(self, max_depth, min_leaf, n_sub, rng):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.n_sub = n_sub
        self.rng = rng
        self.nodes = []  # (feature, threshold, left, right) or (-1, prob, -1, -1)

    def fit(self, X, y, importance):
        self.n_root = len(y)
        self._grow(X, y, 0, importance)
        return self

    def _grow(self, X, y, depth, importance):
        idx = len(self.nodes)
        self.nodes.append(None)
        pos = y.sum()
        n = len(y)
        if depth < self.max_depth and 0 < pos < n:
            feats = self.rng.choice(X.shape[1], size=self.n_sub, replace=False)
            best = None
            for j in np.sort(feats):
                s = best_split(X[:, j], y, self.min_leaf)
                if s is not None and s[0] > 0 and (best is None or s[0] > best[0]):
                    best = (s[0], j, s[1])
            if best is not None:
                gain, j, thr = best
                importance[j] += gain * n / self.n_root
                mask = X[:, j] <= thr
                left = self._grow(X[mask], y[mask], depth + 1, importance)
                right = self._grow(X[~mask], y[~mask], depth + 1, importance)
                self.nodes[idx] = (j, thr, left, right)
                return idx
        self.nodes[idx] = (-1, pos / n, -1, -1)
        return idx

    def predict_proba(self, X):
        out = np.empty(len(X))
        for r, row in enumerate(X):
            i = 0
            while True:
                j, thr, left, right = self.nodes[i]
                if j < 0:
                    out[r] = thr
                    break
                i = left if row[j] <= thr else right
        return out


@dataclass
class ForestResult:
    importances: np.ndarray
    degenerate: bool = False
    trees: list | None = None


def forest_importance(X: np.ndarray, y: np.ndarray, params: ForestParams | None = None) -> ForestResult:
    """Mean decrease in Gini impurity (node-fraction weighted), averaged over trees, sums to 1.

    Single-class input gives all-zero importances with ``degenerate`` set.
    Each tree draws from its own seeded substream so results do not depend
    on training order.
    """
    params = params or ForestParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least 2 samples")
    if len(np.unique(y)) < 2:
        return ForestResult(np.zeros(d), degenerate=True)
    n_sub = params.feature_subsample or max(1, int(np.sqrt(d)))
    n_sub = min(n_sub, d)
    total = np.zeros(d)
    trees = []
    seeds = np.random.SeedSequence(params.seed).spawn(params.trees)
    for ss in seeds:
        rng = np.random.default_rng(ss)
        if params.bootstrap:
            rows = rng.integers(0, n, size=n)
            Xb, yb = X[rows], y[rows]
        else:
            Xb, yb = X, y
        imp = np.zeros(d)
        trees.append(_Tree(params.max_depth, params.min_leaf, n_sub, rng).fit(Xb, yb, imp))
        total += imp
    total /= params.trees
    s = total.sum()
    if s <= 0:
        return ForestResult(np.zeros(d), degenerate=True, trees=trees)
    return ForestResult(total / s, trees=trees)


# --------------------------------------------------------------------------
# rankings


def rank_order(scores: np.ndarray, names: list[str]) -> np.ndarray:
    """1-based ranks by descending score; equal scores rank by feature name."""
    order = sorted(range(len(names)), key=lambda i: (-scores[i], names[i]))
    ranks = np.empty(len(names), dtype=np.int64)
    ranks[order] = np.arange(1, len(names) + 1)
    return ranks


def combine_rankings(fisher_ranks: np.ndarray, forest_ranks: np.ndarray, top_k: int = 8) -> np.ndarray:
    """Boolean mask: union of each method's ``top_k`` features."""
    fisher_ranks = np.asarray(fisher_ranks)
    forest_ranks = np.asarray(forest_ranks)
    if fisher_ranks.shape != forest_ranks.shape:
        raise ValueError("rankings cover different feature sets")
    if top_k > len(fisher_ranks):
        raise ValueError(f"top_k={top_k} exceeds feature count {len(fisher_ranks)}")
    return (fisher_ranks <= top_k) | (forest_ranks <= top_k)


@dataclass
class RankingReport:
    names: list[str]
    fisher_score: np.ndarray
    forest_importance: np.ndarray
    fisher_rank: np.ndarray
    forest_rank: np.ndarray
    selected: np.ndarray
    degenerate: bool = False

    @property
    def selected_features(self) -> list[str]:
        return [n for n, s in zip(self.names, self.selected) if s]

    def rows(self) -> list[dict]:
        return [
            {
                "feature": n,
                "fisher_score": float(self.fisher_score[i]),
                "forest_importance": float(self.forest_importance[i]),
                "fisher_rank": int(self.fisher_rank[i]),
                "forest_rank": int(self.forest_rank[i]),
                "selected": bool(self.selected[i]),
            }
            for i, n in enumerate(self.names)
        ]

    def to_json(self) -> str:
        return json.dumps(
            {"features": self.rows(), "selected": self.selected_features, "degenerate": self.degenerate},
            indent=2,
        )

    def table(self) -> str:
        lines = [f"{'feature':<28}{'fisher':>14}{'rank':>6}{'forest':>10}{'rank':>6}  sel"]
        for r in sorted(self.rows(), key=lambda r: r["forest_rank"]):
            lines.append(
                f"{r['feature']:<28}{r['fisher_score']:>14.5g}{r['fisher_rank']:>6}"
                f"{r['forest_importance']:>10.4f}{r['forest_rank']:>6}  {'*' if r['selected'] else ''}"
            )
        return "\n".join(lines)


def rank_features(X: np.ndarray, y: np.ndarray, names: list[str], top_k: int = 8, params: ForestParams | None = None) -> RankingReport:
    fs = fisher_scores(X, y)
    forest = forest_importance(X, y, params)
    fr = rank_order(fs, names)
    rr = rank_order(forest.importances, names)
    sel = combine_rankings(fr, rr, min(top_k, len(names)))
    return RankingReport(list(names), fs, forest.importances, fr, rr, sel, forest.degenerate)
