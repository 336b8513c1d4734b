"""Bidirectional LSTM purchase models over session data.

Two sample kinds feed the same network:

* feature sequences: a window of a user's consecutive session feature
  vectors, labelled by whether the *next* session has a purchase;
* baseline sequences: the event codes (view=1, cart=2, remove=3) of one
  session before its first purchase, with per-event dwell times, labelled by
  whether the session has a purchase.

Everything is plain numpy. Batches are right-padded and masked: at padded
steps the recurrent state is carried through unchanged, and the backward
direction reads each sequence reversed within its own length.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .aggregate import SESSION_FEATURES, Aggregator, GroupBy, SessionFeatures
from .classify import EvalReport, evaluate, format_table, sigmoid, split_indices
from .imbalance import random_oversample, smote_generate
from .ingest import EventType, RawEvent

log = logging.getLogger(__name__)

MAX_BASELINE_EVENTS = 100
DEFAULT_WINDOW = 10

# TotalEventsInSession counts purchase events, so it stays out of model inputs.
SEQUENCE_FEATURES = tuple(c for c in SESSION_FEATURES if c != "TotalEventsInSession")

ABLATION_GRID = ((60,), (40,), (20,), (10,), (40, 20), (20, 10), (40, 20, 10))


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}")
        self.epoch = epoch


# --------------------------------------------------------------------------
# cell


@dataclass
class LstmCellParams:
    """Gate blocks are stacked in the order input, forget, candidate, output."""

    W: np.ndarray  # (4H, D)
    U: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    def __post_init__(self):
        H4, D = self.W.shape
        if H4 % 4 or self.U.shape != (H4, H4 // 4) or self.b.shape != (H4,):
            raise ValueError(f"inconsistent LSTM shapes {self.W.shape} {self.U.shape} {self.b.shape}")

    @property
    def H(self) -> int:
        return self.U.shape[1]

    @property
    def D(self) -> int:
        return self.W.shape[1]

    @classmethod
    def init(cls, D: int, H: int, rng: np.random.Generator) -> LstmCellParams:
        a = 1.0 / math.sqrt(H)
        b = rng.uniform(-a, a, 4 * H)
        b[H : 2 * H] += 1.0
        return cls(rng.uniform(-a, a, (4 * H, D)), rng.uniform(-a, a, (4 * H, H)), b)

    @classmethod
    def zeros(cls, D: int, H: int) -> LstmCellParams:
        return cls(np.zeros((4 * H, D)), np.zeros((4 * H, H)), np.zeros(4 * H))

    def arrays(self) -> list[np.ndarray]:
        return [self.W, self.U, self.b]


def lstm_step(params: LstmCellParams, x_t, h_prev, c_prev):
    """One LSTM update; works on single vectors or (batch, dim) arrays."""
    x_t, h_prev, c_prev = (np.asarray(a, dtype=np.float64) for a in (x_t, h_prev, c_prev))
    if x_t.shape[-1] != params.D or h_prev.shape[-1] != params.H or c_prev.shape != h_prev.shape:
        raise ValueError("shape mismatch in lstm_step")
    H = params.H
    z = x_t @ params.W.T + h_prev @ params.U.T + params.b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H : 2 * H])
    g = np.tanh(z[..., 2 * H : 3 * H])
    o = sigmoid(z[..., 3 * H :])
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


def direction_forward(p: LstmCellParams, X: np.ndarray, M: np.ndarray):
    """Run one direction over a right-padded batch.

    X: (B, T, D), M: (B, T) 0/1 mask. Returns (outputs (B, T, H) zeroed at
    padding, final hidden state (B, H), cache).
    """
    B, T, _ = X.shape
    H = p.H
    XW = X @ p.W.T + p.b
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    out = np.zeros((B, T, H))
    steps = []
    for t in range(T):
        z = XW[:, t] + h @ p.U.T
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = sigmoid(z[:, 3 * H :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        m = M[:, t : t + 1]
        steps.append((h, c, i, f, g, o, tc))
        out[:, t] = m * h_new
        h = m * h_new + (1 - m) * h
        c = m * c_new + (1 - m) * c
    return out, h, (X, M, steps)


def direction_backward(p: LstmCellParams, cache, d_out: np.ndarray | None, d_h_final: np.ndarray | None):
    """Backpropagation through time for :func:`direction_forward`.

    Returns (grads [dW, dU, db], dX).
    """
    X, M, steps = cache
    B, T, _ = X.shape
    H = p.H
    dW = np.zeros_like(p.W)
    dU = np.zeros_like(p.U)
    db = np.zeros_like(p.b)
    dX = np.zeros_like(X)
    g_h = np.zeros((B, H)) if d_h_final is None else d_h_final.copy()
    g_c = np.zeros((B, H))
    dz = np.empty((B, 4 * H))
    for t in range(T - 1, -1, -1):
        h_prev, c_prev, i, f, g, o, tc = steps[t]
        m = M[:, t : t + 1]
        dh_new = g_h if d_out is None else g_h + d_out[:, t]
        dh_new = m * dh_new
        dc_new = m * g_c + dh_new * o * (1 - tc * tc)
        dz[:, :H] = dc_new * g * i * (1 - i)
        dz[:, H : 2 * H] = dc_new * c_prev * f * (1 - f)
        dz[:, 2 * H : 3 * H] = dc_new * i * (1 - g * g)
        dz[:, 3 * H :] = dh_new * tc * o * (1 - o)
        dW += dz.T @ X[:, t]
        dU += dz.T @ h_prev
        db += dz.sum(axis=0)
        dX[:, t] = dz @ p.W
        g_h = (1 - m) * g_h + dz @ p.U
        g_c = (1 - m) * g_c + dc_new * f
    return [dW, dU, db], dX


def reverse_index(lengths: np.ndarray, T: int) -> np.ndarray:
    """(B, T) gather index reversing each row within its length (an involution)."""
    t = np.arange(T)[None, :]
    L = np.asarray(lengths)[:, None]
    return np.where(t < L, L - 1 - t, t)


def _gather(A: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return np.take_along_axis(A, idx[:, :, None], axis=1)


# --------------------------------------------------------------------------
# model


@dataclass
class SequenceConfig:
    layers: tuple[int, ...] = (40,)
    epochs: int = 20
    batch: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip: float = 5.0
    seed: int = 42

    def __post_init__(self):
        self.layers = tuple(self.layers)
        if not 1 <= len(self.layers) <= 3:
            raise ValueError("1 to 3 bidirectional layers supported")


@dataclass
class BiLstmModel:
    layers: list[tuple[LstmCellParams, LstmCellParams]]
    w_out: np.ndarray
    b_out: np.ndarray
    config: SequenceConfig = field(default_factory=SequenceConfig)
    input_columns: list[str] | None = None
    input_mean: np.ndarray | None = None
    input_scale: np.ndarray | None = None
    log_inputs: bool = False
    training_log: list[float] = field(default_factory=list)

    @classmethod
    def init(cls, D: int, config: SequenceConfig, rng: np.random.Generator | None = None) -> BiLstmModel:
        rng = rng or np.random.default_rng(config.seed)
        layers = []
        d = D
        for H in config.layers:
            layers.append((LstmCellParams.init(d, H, rng), LstmCellParams.init(d, H, rng)))
            d = 2 * H
        a = 1.0 / math.sqrt(d)
        return cls(layers, rng.uniform(-a, a, d), np.zeros(1), config)

    @classmethod
    def zeros(cls, D: int, widths: Sequence[int]) -> BiLstmModel:
        layers = []
        d = D
        for H in widths:
            layers.append((LstmCellParams.zeros(d, H), LstmCellParams.zeros(d, H)))
            d = 2 * H
        return cls(layers, np.zeros(d), np.zeros(1), SequenceConfig(layers=tuple(widths)))

    def arrays(self) -> list[np.ndarray]:
        out = []
        for fwd, bwd in self.layers:
            out += fwd.arrays() + bwd.arrays()
        return out + [self.w_out, self.b_out]

    def array_names(self) -> list[str]:
        names = []
        for l in range(len(self.layers)):
            for d in ("fwd", "bwd"):
                names += [f"layer{l}.{d}.{n}" for n in ("W", "U", "b")]
        return names + ["out.w", "out.b"]

    # forward / backward on a padded batch

    def _forward(self, X: np.ndarray, lengths: np.ndarray):
        B, T, _ = X.shape
        M = (np.arange(T)[None, :] < lengths[:, None]).astype(np.float64)
        rev = reverse_index(lengths, T)
        inp = X
        caches = []
        for fwd, bwd in self.layers:
            out_f, hf, cf = direction_forward(fwd, inp, M)
            out_b_rev, hb, cb = direction_forward(bwd, _gather(inp, rev), M)
            caches.append((cf, cb))
            inp = np.concatenate([out_f, _gather(out_b_rev, rev)], axis=2)
        final = np.concatenate([hf, hb], axis=1)
        logit = final @ self.w_out + self.b_out[0]
        return logit, (final, caches, rev)

    def logits(self, X, lengths) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        lengths = np.asarray(lengths, dtype=np.int64)
        if X.ndim != 3 or X.shape[0] != len(lengths):
            raise ValueError("expected (batch, time, features) inputs with one length per row")
        if (lengths < 1).any():
            raise ValueError("empty sequence")
        return self._forward(X, lengths)[0]

    def predict_proba(self, X, lengths, batch: int = 512) -> np.ndarray:
        X = self.prepare(X, lengths)
        lengths = np.asarray(lengths, dtype=np.int64)
        out = np.empty(len(lengths))
        for s in range(0, len(lengths), batch):
            L = lengths[s : s + batch]
            out[s : s + batch] = sigmoid(self.logits(X[s : s + batch, : L.max()], L))
        return out

    def prepare(self, X, lengths) -> np.ndarray:
        """Apply the model's input transform (log + standardization) to raw inputs."""
        X = np.asarray(X, dtype=np.float64)
        if self.log_inputs:
            X = np.log1p(np.maximum(X, 0.0))
        if self.input_mean is not None:
            X = (X - self.input_mean) / self.input_scale
            T = X.shape[1]
            M = np.arange(T)[None, :] < np.asarray(lengths)[:, None]
            X = np.where(M[:, :, None], X, 0.0)
        return X

    def loss_and_grads(self, X, lengths, y) -> tuple[float, list[np.ndarray]]:
        """Mean binary cross-entropy over the batch and its gradient per array."""
        X = np.asarray(X, dtype=np.float64)
        lengths = np.asarray(lengths, dtype=np.int64)
        y = np.asarray(y, dtype=np.float64)
        B, T, _ = X.shape
        logit, (final, caches, rev) = self._forward(X, lengths)
        loss = float(np.mean(np.logaddexp(0.0, logit) - y * logit))
        d_logit = (sigmoid(logit) - y) / B
        d_w_out = final.T @ d_logit
        d_b_out = np.array([d_logit.sum()])
        d_final = d_logit[:, None] * self.w_out[None, :]
        grads_layers = []
        d_inp = None
        for li in range(len(self.layers) - 1, -1, -1):
            fwd, bwd = self.layers[li]
            cf, cb = caches[li]
            H = fwd.H
            if li == len(self.layers) - 1:
                d_hf, d_hb = d_final[:, :H], d_final[:, H:]
                d_of = d_ob = None
            else:
                d_hf = d_hb = None
                d_of = d_inp[:, :, :H]
                d_ob = _gather(d_inp[:, :, H:], rev)
            gf, dXf = direction_backward(fwd, cf, d_of, d_hf)
            gb, dXb_rev = direction_backward(bwd, cb, d_ob, d_hb)
            d_inp = dXf + _gather(dXb_rev, rev)
            grads_layers.append(gf + gb)
        grads = []
        for g in reversed(grads_layers):
            grads += g
        return loss, grads + [d_w_out, d_b_out]


def bilstm_forward(model: BiLstmModel, sequence) -> float:
    """Purchase probability for one (T, D) sequence (already in model input space)."""
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.ndim != 2 or len(seq) == 0:
        raise ValueError("empty sequence")
    return float(sigmoid(model.logits(seq[None], np.array([len(seq)])))[0])


# --------------------------------------------------------------------------
# samples


@dataclass
class BaselineSample:
    session_id: str
    codes: tuple[int, ...]
    dwell: tuple[float, ...]
    label: int


@dataclass
class FeatureSequenceSample:
    user_id: str
    session_ids: tuple[str, ...]
    window: np.ndarray  # (L, D)
    label: int


class BaselineAggregator(Aggregator):
    """Collects (time, seq, code) per session; finalizes to a BaselineSample or None."""

    def __init__(self, max_events: int = MAX_BASELINE_EVENTS):
        self.max_events = max_events

    def key(self, e):
        return e.user_session

    def init(self, e, seq):
        return [(e.event_time, seq, int(e.event_type))]

    def update(self, st, e, seq):
        st.append((e.event_time, seq, int(e.event_type)))

    def merge(self, a, b):
        a.extend(b)
        return a

    def finalize(self, key, st):
        st.sort()
        codes = [c for _, _, c in st]
        times = [t for t, _, _ in st]
        label = int(EventType.PURCHASE in codes)
        cut = codes.index(EventType.PURCHASE) if label else len(codes)
        codes, times = codes[:cut], times[:cut]
        if not codes:
            return None
        codes, times = codes[-self.max_events :], times[-self.max_events :]
        dwell = [float(times[i + 1] - times[i]) for i in range(len(times) - 1)] + [0.0]
        return BaselineSample(key, tuple(codes), tuple(dwell), label)


def build_baseline_sequences(events: Iterable[RawEvent], max_events: int = MAX_BASELINE_EVENTS, **engine) -> list[BaselineSample]:
    """One sample per session; sessions opening with a purchase have no input and are skipped."""
    g = GroupBy(BaselineAggregator(max_events), **engine)
    g.feed(events)
    return [s for s in g.results() if s is not None]


def build_feature_sequences(
    sessions: Iterable[SessionFeatures | dict],
    window: int = DEFAULT_WINDOW,
    columns: Sequence[str] = SEQUENCE_FEATURES,
) -> list[FeatureSequenceSample]:
    """Sliding windows over each user's time-ordered sessions.

    Every session that has a successor yields a sample: up to ``window``
    sessions ending at it, labelled with the successor's purchase flag.
    """
    if "purchased" in columns:
        raise ValueError("label column cannot be an input")
    by_user: dict[str, list] = {}
    for s in sessions:
        row = dataclasses.asdict(s) if dataclasses.is_dataclass(s) else dict(s)
        by_user.setdefault(row["user_id"], []).append(row)
    out = []
    for user in sorted(by_user):
        rows = sorted(by_user[user], key=lambda r: (r["start_time"], r["session_id"]))
        feats = np.array([[r[c] for c in columns] for r in rows], dtype=np.float64)
        for i in range(len(rows) - 1):
            lo = max(0, i - window + 1)
            out.append(
                FeatureSequenceSample(
                    user,
                    tuple(r["session_id"] for r in rows[lo : i + 1]),
                    feats[lo : i + 1],
                    int(rows[i + 1]["purchased"]),
                )
            )
    return out


@dataclass
class SequenceDataset:
    X: np.ndarray  # (N, T, D) right-padded
    lengths: np.ndarray
    y: np.ndarray
    columns: list[str]
    kind: str  # "features" | "baseline"

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> SequenceDataset:
        return SequenceDataset(self.X[idx], self.lengths[idx], self.y[idx], self.columns, self.kind)


def feature_dataset(samples: Sequence[FeatureSequenceSample], columns=SEQUENCE_FEATURES, window: int = DEFAULT_WINDOW) -> SequenceDataset:
    D = len(columns)
    X = np.zeros((len(samples), window, D))
    lengths = np.zeros(len(samples), dtype=np.int64)
    for r, s in enumerate(samples):
        L = len(s.window)
        X[r, :L] = s.window
        lengths[r] = L
    y = np.array([s.label for s in samples], dtype=np.int64)
    return SequenceDataset(X, lengths, y, list(columns), "features")


BASELINE_COLUMNS = ["is_view", "is_cart", "is_remove", "log_dwell"]


def baseline_dataset(samples: Sequence[BaselineSample]) -> SequenceDataset:
    """One-hot event code (3) plus log(1 + dwell seconds)."""
    T = max((len(s.codes) for s in samples), default=1)
    X = np.zeros((len(samples), T, 4))
    lengths = np.zeros(len(samples), dtype=np.int64)
    for r, s in enumerate(samples):
        L = len(s.codes)
        codes = np.asarray(s.codes)
        if (codes == EventType.PURCHASE).any():
            raise ValueError("purchase code in baseline input")
        X[r, np.arange(L), codes - 1] = 1.0
        X[r, :L, 3] = np.log1p(np.asarray(s.dwell))
        lengths[r] = L
    y = np.array([s.label for s in samples], dtype=np.int64)
    return SequenceDataset(X, lengths, y, list(BASELINE_COLUMNS), "baseline")


# --------------------------------------------------------------------------
# balancing


def balance_sequences(data: SequenceDataset, mode: str, seed: int, k: int = 5) -> SequenceDataset:
    """Equalize classes in a training set.

    ``smote`` interpolates flattened windows of minority samples that share
    the same true length (singleton length groups are duplicated);
    ``oversample`` redraws minority samples with replacement; ``none`` is
    the identity.
    """
    if mode == "none":
        return data
    counts = np.bincount(data.y, minlength=2)
    minority = int(np.argmin(counts))
    need = int(counts.max() - counts.min())
    if need == 0:
        return data
    idx = np.flatnonzero(data.y == minority)
    rng = np.random.default_rng(seed)
    if mode == "oversample":
        extra = idx[random_oversample(len(idx), need, seed)]
        return SequenceDataset(
            np.concatenate([data.X, data.X[extra]]),
            np.concatenate([data.lengths, data.lengths[extra]]),
            np.concatenate([data.y, data.y[extra]]),
            data.columns,
            data.kind,
        )
    if mode != "smote":
        raise ValueError(f"unknown balance mode {mode!r}")
    T, D = data.X.shape[1:]
    groups = {L: idx[data.lengths[idx] == L] for L in np.unique(data.lengths[idx])}
    # largest-remainder allocation of the synthetic budget across length groups
    share = {L: need * len(g) / len(idx) for L, g in groups.items()}
    alloc = {L: int(np.floor(v)) for L, v in share.items()}
    rest = need - sum(alloc.values())
    for L in sorted(groups, key=lambda L: (-(share[L] - alloc[L]), L))[:rest]:
        alloc[L] += 1
    new_X, new_len = [], []
    for L in sorted(groups):
        g, n_new = groups[L], alloc[L]
        if n_new == 0:
            continue
        flat = data.X[g, :L].reshape(len(g), L * D)
        if len(g) >= 2:
            synth = smote_generate(flat, n_new, min(k, len(g) - 1), rng)[0]
        else:
            synth = np.repeat(flat, n_new, axis=0)
        block = np.zeros((n_new, T, D))
        block[:, :L] = synth.reshape(n_new, L, D)
        new_X.append(block)
        new_len.append(np.full(n_new, L))
    return SequenceDataset(
        np.concatenate([data.X] + new_X),
        np.concatenate([data.lengths] + new_len),
        np.concatenate([data.y, np.full(need, minority)]),
        data.columns,
        data.kind,
    )


# --------------------------------------------------------------------------
# training


def _fit_input_transform(model: BiLstmModel, data: SequenceDataset) -> None:
    X = data.X
    if data.kind == "features":
        model.log_inputs = True
        X = np.log1p(np.maximum(X, 0.0))
    M = np.arange(X.shape[1])[None, :] < data.lengths[:, None]
    vals = X[M]
    model.input_mean = vals.mean(axis=0)
    model.input_scale = np.maximum(vals.std(axis=0), 1e-12)
    model.input_columns = list(data.columns)


def clip_by_norm(grads: list[np.ndarray], max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


class Adam:
    def __init__(self, params: list[np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def fit(model: BiLstmModel, data: SequenceDataset, config: SequenceConfig) -> list[float]:
    """Mini-batch Adam on mean BCE; returns the per-epoch mean training loss."""
    rng = np.random.default_rng([config.seed, 1])
    X = model.prepare(data.X, data.lengths)
    opt = Adam(model.arrays(), config.lr, config.beta1, config.beta2, config.adam_eps)
    n = len(data)
    history = []
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for s in range(0, n, config.batch):
            b = perm[s : s + config.batch]
            L = data.lengths[b]
            loss, grads = model.loss_and_grads(X[b, : L.max()], L, data.y[b])
            if not math.isfinite(loss):
                raise DivergenceError(epoch, loss)
            clip_by_norm(grads, config.clip)
            opt.step(grads)
            total += loss * len(b)
        mean = total / n
        if not math.isfinite(mean):
            raise DivergenceError(epoch, mean)
        history.append(mean)
        log.debug("epoch %d loss %.5f", epoch, mean)
    model.training_log.extend(history)
    return history


def evaluate_model(model: BiLstmModel, data: SequenceDataset, threshold: float = 0.5) -> EvalReport:
    p = model.predict_proba(data.X, data.lengths)
    return evaluate(p >= threshold, data.y)


@dataclass
class SequenceRun:
    model: BiLstmModel
    report: EvalReport
    train_report: EvalReport
    loss_history: list[float]
    target: str
    balance: str


def train_sequence(data: SequenceDataset, config: SequenceConfig | None = None, balance: str = "smote") -> SequenceRun:
    """Stratified 70/30 split, balance the training part, fit, evaluate on the held-out 30%."""
    config = config or SequenceConfig()
    if len(np.unique(data.y)) < 2:
        raise ValueError("need both labels present")
    tr, te = split_indices(data.y, config.seed)
    train, test = data.subset(tr), data.subset(te)
    if balance == "smote" and data.kind == "baseline":
        # interpolating one-hot event codes is meaningless
        balance = "oversample"
    train_bal = balance_sequences(train, balance, config.seed)
    model = BiLstmModel.init(data.X.shape[2], config)
    _fit_input_transform(model, train)
    history = fit(model, train_bal, config)
    target = "next_session_purchase" if data.kind == "features" else "session_purchase"
    return SequenceRun(model, evaluate_model(model, test), evaluate_model(model, train), history, target, balance)


def layer_label(widths: Sequence[int]) -> str:
    if len(widths) == 1:
        return f"1 layer of {widths[0]} neurons"
    return f"{len(widths)} layers " + " + ".join(f"{w} neurons" for w in widths)


def run_ablation(data: SequenceDataset, base: SequenceConfig | None = None, balance: str = "smote", grid=ABLATION_GRID) -> list[tuple[str, EvalReport]]:
    base = base or SequenceConfig()
    rows = []
    for widths in grid:
        cfg = dataclasses.replace(base, layers=tuple(widths))
        run = train_sequence(data, cfg, balance)
        rows.append((layer_label(widths), run.report))
        log.info("%s: recall %.4f", layer_label(widths), run.report.recall)
    return rows


def ablation_table(rows: list[tuple[str, EvalReport]]) -> str:
    return format_table(rows, ("recall", "accuracy", "precision", "f1"))
