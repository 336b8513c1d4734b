"""Class weighting and SMOTE oversampling for binary labels."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


def class_weights(y) -> dict[int, float]:
    """Inverse-frequency weights ``n / (2 n_c)``; their mean over samples is 1."""
    y = np.asarray(y).astype(np.int64)
    counts = np.bincount(y, minlength=2)
    if len(counts) > 2 or (counts == 0).any():
        raise ValueError("class_weights needs exactly two classes, both present")
    n = len(y)
    return {c: n / (2.0 * counts[c]) for c in (0, 1)}


def sample_weights(y) -> np.ndarray:
    w = class_weights(y)
    y = np.asarray(y).astype(np.int64)
    return np.where(y == 1, w[1], w[0])


@dataclass
class BalanceOutcome:
    X: np.ndarray
    y: np.ndarray
    synthetic_count: int
    minority_class: int
    seed: int
    # per synthetic row: (base minority index, neighbour minority index, u)
    origins: np.ndarray | None = None


def minority_neighbors(Xm: np.ndarray, k: int) -> np.ndarray:
    """Indices of each row's k nearest other rows (Euclidean, ties by lower index)."""
    m = len(Xm)
    out = np.empty((m, k), dtype=np.int64)
    block = max(1, 4_000_000 // max(m * Xm.shape[1], 1))
    for s in range(0, m, block):
        q = Xm[s : s + block]
        d = ((q[:, None, :] - Xm[None, :, :]) ** 2).sum(axis=2)
        d[np.arange(len(q)), np.arange(s, s + len(q))] = np.inf
        out[s : s + block] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def smote_generate(Xm: np.ndarray, n_new: int, k: int, rng: np.random.Generator):
    """``n_new`` interpolated rows from the minority rows ``Xm``.

    Returns (rows, origins) where origins holds (base index, neighbour index, u).
    """
    m = len(Xm)
    nn = minority_neighbors(Xm, k)
    base = np.arange(n_new) % m
    pick = rng.integers(0, k, size=n_new)
    u = rng.random(n_new)
    nbr = nn[base, pick]
    synth = Xm[base] + u[:, None] * (Xm[nbr] - Xm[base])
    return synth, np.column_stack([base, nbr, u])


def smote(X, y, k: int = 5, target_ratio: float = 1.0, seed: int = 42) -> BalanceOutcome:
    """Oversample the minority class by interpolating towards minority neighbours.

    Synthetic rows are ``x + u (x_nn - x)`` with ``u ~ U(0, 1)``; enough are
    made that minority/majority reaches ``target_ratio``. Base points cycle
    through the minority rows in index order, so every minority row seeds
    the same number of synthetic rows (up to one). Original rows come first
    and are returned unchanged.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    counts = np.bincount(y, minlength=2)
    if len(counts) != 2 or (counts == 0).any():
        raise ValueError("smote needs both classes present")
    minority = int(np.argmin(counts)) if counts[0] != counts[1] else 1
    majority = 1 - minority
    idx = np.flatnonzero(y == minority)
    m = len(idx)
    if m < 2:
        raise ValueError("minority class needs at least 2 samples")
    if k >= m:
        warnings.warn(f"k={k} >= minority count {m}; clamping to {m - 1}", stacklevel=2)
        k = m - 1
    need = int(np.floor(target_ratio * counts[majority] + 0.5)) - m
    if need <= 0:
        return BalanceOutcome(X.copy(), y.copy(), 0, minority, seed, np.zeros((0, 3)))
    rng = np.random.default_rng(seed)
    synth, origins = smote_generate(X[idx], need, k, rng)
    X_out = np.vstack([X, synth])
    y_out = np.concatenate([y, np.full(need, minority, dtype=np.int64)])
    log.debug("smote: %d synthetic rows for class %d", need, minority)
    return BalanceOutcome(X_out, y_out, need, minority, seed, origins)


def random_oversample(n_minority: int, n_needed: int, seed: int) -> np.ndarray:
    """Indices (into the minority set) drawn with replacement."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, n_minority, size=n_needed)
