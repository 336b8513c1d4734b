"""Central finite-difference check of the Bi-LSTM loss gradients."""

from __future__ import annotations

import numpy as np


def worst_relative_error(model, X, lengths, y, step=1e-5):
    """Largest per-tensor relative error between analytic and numeric gradients."""
    _, grads = model.loss_and_grads(X, lengths, y)
    worst = {}
    for arr, g, name in zip(model.arrays(), grads, model.array_names()):
        num = np.zeros_like(arr)
        for i in np.ndindex(arr.shape):
            old = arr[i]
            arr[i] = old + step
            lp, _ = model.loss_and_grads(X, lengths, y)
            arr[i] = old - step
            lm, _ = model.loss_and_grads(X, lengths, y)
            arr[i] = old
            num[i] = (lp - lm) / (2 * step)
        denom = max(np.linalg.norm(num), np.linalg.norm(g), 1e-30)
        worst[name] = float(np.linalg.norm(num - g) / denom)
    return worst
