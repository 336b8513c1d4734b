"""Journey-level classifiers (logistic regression, KNN), splitting and metrics."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .aggregate import Standardization

log = logging.getLogger(__name__)

KNN_CANDIDATES = tuple(range(3, 30, 2))


# --------------------------------------------------------------------------
# metrics


@dataclass
class EvalReport:
    tp: int
    tn: int
    fp: int
    fn: int
    precision: float
    recall: float
    accuracy: float
    f1: float
    degenerate: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn,
            "precision": self.precision, "recall": self.recall,
            "accuracy": self.accuracy, "f1": self.f1,
            "degenerate": list(self.degenerate),
        }


def report_from_counts(tp: int, tn: int, fp: int, fn: int) -> EvalReport:
    flags = []
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        flags.append("precision")
    if tp + fn:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        flags.append("recall")
    n = tp + tn + fp + fn
    if n:
        accuracy = (tp + tn) / n
    else:
        accuracy = 0.0
        flags.append("accuracy")
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        flags.append("f1")
    return EvalReport(tp, tn, fp, fn, precision, recall, accuracy, f1, flags)


def evaluate(predicted, truth) -> EvalReport:
    predicted = np.asarray(predicted).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if predicted.shape != truth.shape:
        raise ValueError(f"length mismatch: {predicted.shape} vs {truth.shape}")
    tp = int(np.sum(predicted & truth))
    tn = int(np.sum(~predicted & ~truth))
    fp = int(np.sum(predicted & ~truth))
    fn = int(np.sum(~predicted & truth))
    return report_from_counts(tp, tn, fp, fn)


def format_table(rows: list[tuple[str, EvalReport]], metrics=("recall", "accuracy", "precision")) -> str:
    """Plain-text table, one model per row, metrics as columns."""
    width = max([len(name) for name, _ in rows] + [5]) + 2
    head = "Model".ljust(width) + "".join(m.capitalize().rjust(11) for m in metrics)
    lines = [head, "-" * len(head)]
    for name, rep in rows:
        lines.append(name.ljust(width) + "".join(f"{getattr(rep, m):>11.4f}" for m in metrics))
    return "\n".join(lines)


# --------------------------------------------------------------------------
# splitting


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_indices(y, seed: int = 42, train_fraction: float = 0.7, stratified: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Shuffled train/test row indices; ``len(train) == round(0.7 n)``.

    With ``stratified`` each class contributes round(0.7 n_c) training rows,
    nudged by one where needed so the total matches.
    """
    y = np.asarray(y).astype(np.int64)
    n = len(y)
    if n < 10:
        raise ValueError("need at least 10 rows to split")
    rng = np.random.default_rng(seed)
    n_train = _round_half_up(train_fraction * n)
    if not stratified:
        perm = rng.permutation(n)
        return np.sort(perm[:n_train]), np.sort(perm[n_train:])
    classes = np.unique(y)
    members = {c: rng.permutation(np.flatnonzero(y == c)) for c in classes}
    for c, idx in members.items():
        if len(idx) < 2:
            raise ValueError(f"class {c} has fewer than 2 samples")
    exact = {c: train_fraction * len(members[c]) for c in classes}
    take = {c: _round_half_up(exact[c]) for c in classes}
    diff = n_train - sum(take.values())
    # move the remainder onto classes whose rounding lost (or gained) the most
    order = sorted(classes, key=lambda c: (take[c] - exact[c]) * np.sign(diff))
    for c in order:
        if diff == 0:
            break
        step = int(np.sign(diff))
        if 1 <= take[c] + step <= len(members[c]) - 1:
            take[c] += step
            diff -= step
    train = np.concatenate([members[c][: take[c]] for c in classes])
    test = np.concatenate([members[c][take[c]:] for c in classes])
    return np.sort(train), np.sort(test)


def split_70_30(X, y, seed: int = 42, stratified: bool = True):
    """``((X_train, y_train), (X_test, y_test))``."""
    X = np.asarray(X)
    y = np.asarray(y)
    tr, te = split_indices(y, seed, 0.7, stratified)
    return (X[tr], y[tr]), (X[te], y[te])


# --------------------------------------------------------------------------
# logistic regression


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _log1pexp(z):
    return np.logaddexp(0.0, z)


@dataclass
class LogisticHyper:
    l2: float = 1e-4
    tol: float = 1e-6
    max_iter: int = 1000


@dataclass
class LogisticModel:
    coef: np.ndarray
    intercept: float
    hyper: LogisticHyper
    standardization: Standardization | None = None
    columns: list[str] | None = None
    loss_log: list[float] = field(default_factory=list)
    grad_norm: float = float("nan")
    converged: bool = False

    def decision(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.coef):
            raise ValueError(f"expected {len(self.coef)} columns, got {X.shape}")
        if self.standardization is not None:
            X = self.standardization.apply(X)
        return X @ self.coef + self.intercept


def logistic_loss(w: np.ndarray, b: float, X, y, s, l2: float) -> float:
    z = X @ w + b
    per = _log1pexp(z) - y * z
    return float(np.dot(s, per) / s.sum() + 0.5 * l2 * np.dot(w, w))


def logistic_grad(w: np.ndarray, b: float, X, y, s, l2: float) -> np.ndarray:
    """Gradient of the weighted loss w.r.t. (w, b), stacked."""
    r = s * (sigmoid(X @ w + b) - y) / s.sum()
    return np.concatenate([X.T @ r + l2 * w, [r.sum()]])


def train_logistic(X, y, sample_weights=None, hyper: LogisticHyper | None = None, columns=None) -> LogisticModel:
    """Weighted L2 logistic regression by damped Newton steps.

    Each step is halved until the loss does not increase, so the logged loss
    is non-increasing. Stops when the gradient norm reaches ``tol`` or after
    ``max_iter`` iterations. Inputs are expected standardized; the model is
    fit in the given coordinates.
    """
    hyper = hyper or LogisticHyper()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not np.isfinite(X).all():
        raise ValueError("non-finite feature values")
    if len(np.unique(y)) < 2:
        raise ValueError("need both classes present")
    n, d = X.shape
    s = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    s_sum = s.sum()
    Xa = np.hstack([X, np.ones((n, 1))])
    theta = np.zeros(d + 1)
    reg = np.full(d + 1, hyper.l2)
    reg[-1] = 0.0
    loss = logistic_loss(theta[:-1], theta[-1], X, y, s, hyper.l2)
    model = LogisticModel(theta[:-1].copy(), 0.0, hyper, columns=list(columns) if columns is not None else None)
    model.loss_log.append(loss)
    g = logistic_grad(theta[:-1], theta[-1], X, y, s, hyper.l2)
    for it in range(hyper.max_iter):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= hyper.tol:
            model.converged = True
            break
        p = sigmoid(Xa @ theta)
        h = s * p * (1 - p) / s_sum
        H = (Xa * h[:, None]).T @ Xa + np.diag(reg)
        H[np.diag_indices_from(H)] += 1e-12
        step = np.linalg.solve(H, g)
        t = 1.0
        while True:
            cand = theta - t * step
            new_loss = logistic_loss(cand[:-1], cand[-1], X, y, s, hyper.l2)
            if new_loss <= loss or t < 1e-10:
                break
            t *= 0.5
        if new_loss > loss:
            # no descent along the Newton direction; fall back to a gradient step
            t = 1.0
            while t > 1e-12:
                cand = theta - t * g
                new_loss = logistic_loss(cand[:-1], cand[-1], X, y, s, hyper.l2)
                if new_loss <= loss:
                    break
                t *= 0.5
            else:
                break
        theta, loss = cand, new_loss
        model.loss_log.append(loss)
        g = logistic_grad(theta[:-1], theta[-1], X, y, s, hyper.l2)
    model.coef = theta[:-1].copy()
    model.intercept = float(theta[-1])
    model.grad_norm = float(np.linalg.norm(g))
    model.converged = model.converged or model.grad_norm <= hyper.tol
    return model


_P_LO = np.nextafter(0.0, 1.0)
_P_HI = np.nextafter(1.0, 0.0)


def predict_logistic(model: LogisticModel, X) -> np.ndarray:
    """Purchase probabilities, kept strictly inside (0, 1)."""
    return np.clip(sigmoid(model.decision(X)), _P_LO, _P_HI)


def predict_labels(model: LogisticModel, X, threshold: float = 0.5) -> np.ndarray:
    return (predict_logistic(model, X) >= threshold).astype(np.int64)


# --------------------------------------------------------------------------
# k nearest neighbours


def nearest_neighbors(X_train, X_query, k: int, block_elems: int = 8_000_000) -> np.ndarray:
    """Indices of the ``k`` nearest training rows per query.

    Euclidean distance; equal distances resolve to the lower training index.
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    X_query = np.asarray(X_query, dtype=np.float64)
    n, d = X_train.shape
    if n == 0:
        raise ValueError("empty training set")
    if k > n:
        raise ValueError(f"K={k} exceeds training size {n}")
    out = np.empty((len(X_query), k), dtype=np.int64)
    block = max(1, block_elems // max(n * d, 1))
    for s in range(0, len(X_query), block):
        q = X_query[s : s + block]
        dist = np.zeros((len(q), n))
        for j in range(d):
            diff = q[:, j : j + 1] - X_train[:, j]
            dist += diff * diff
        if k < n:
            kth = np.partition(dist, k - 1, axis=1)[:, k - 1 : k]
        else:
            kth = dist.max(axis=1, keepdims=True)
        for r in range(len(q)):
            cand = np.flatnonzero(dist[r] <= kth[r, 0])
            order = np.argsort(dist[r, cand], kind="stable")
            out[s + r] = cand[order[:k]]
    return out


def vote(neighbor_labels: np.ndarray, class_weight: dict | None = None) -> np.ndarray:
    """Majority label; with ``class_weight`` each neighbour counts with its class weight.

    Exact ties go to class 0.
    """
    k = neighbor_labels.shape[1]
    pos = neighbor_labels.sum(axis=1)
    if class_weight is None:
        return (2 * pos > k).astype(np.int64)
    return (class_weight[1] * pos > class_weight[0] * (k - pos)).astype(np.int64)


def knn_predict(X_train, y_train, X_query, K: int, class_weight: dict | None = None) -> np.ndarray:
    y_train = np.asarray(y_train).astype(np.int64)
    nn = nearest_neighbors(X_train, X_query, K)
    return vote(y_train[nn], class_weight)


def stratified_folds(y, folds: int, seed: int) -> list[np.ndarray]:
    y = np.asarray(y).astype(np.int64)
    rng = np.random.default_rng(seed)
    out = [[] for _ in range(folds)]
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        for f, part in enumerate(np.array_split(idx, folds)):
            out[f].append(part)
    return [np.sort(np.concatenate(p)) for p in out]


@dataclass
class KSelection:
    best_k: int
    scores: dict[int, float]
    metric: str


def knn_select_k(
    X, y, folds: int = 5, candidates=KNN_CANDIDATES, seed: int = 42, metric: str = "recall", resample=None,
    class_weight: dict | None = None,
) -> KSelection:
    """Cross-validated choice of K; ties go to the smallest K.

    ``resample(X, y, fold) -> (X, y)`` rebalances each training fold only, so
    synthetic rows never leak into a validation fold.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    candidates = sorted(candidates)
    parts = stratified_folds(y, folds, seed)
    kmax = candidates[-1]
    if min(len(y) - len(p) for p in parts) < kmax:
        raise ValueError(f"candidate K={kmax} exceeds fold training size")
    totals = {k: 0.0 for k in candidates}
    for f, test in enumerate(parts):
        train = np.setdiff1d(np.arange(len(y)), test, assume_unique=True)
        Xf, yf = X[train], y[train]
        if resample is not None:
            Xf, yf = resample(Xf, yf, f)
        nn = nearest_neighbors(Xf, X[test], kmax)
        labels = yf[nn]
        for k in candidates:
            rep = evaluate(vote(labels[:, :k], class_weight), y[test])
            totals[k] += getattr(rep, metric)
    scores = {k: totals[k] / folds for k in candidates}
    best = max(candidates, key=lambda k: (scores[k], -k))
    return KSelection(best, scores, metric)


def reports_json(rows: list[tuple[str, EvalReport]], extra: dict | None = None) -> str:
    body = {"models": {name: rep.to_dict() for name, rep in rows}}
    body.update(extra or {})
    return json.dumps(body, indent=2, sort_keys=True)
