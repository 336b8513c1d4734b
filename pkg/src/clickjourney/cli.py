"""Command-line pipeline: ingest, featurize, rank, train, cluster, report."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import resource
import sys
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

from . import aggregate, classify, features, imbalance, ingest, segmentation, sequence, synth

log = logging.getLogger("clickjourney")

STAGES = ("synth", "ingest", "featurize", "stats", "rank", "train-journey", "train-session", "cluster")
DEFAULT_STAGES = STAGES
BALANCE_MODES = ("none", "weights", "smote")
SESSION_BALANCE_MODES = ("none", "oversample", "smote")
DATASETS = ("cosmetics", "electronics", "synthetic")


# --------------------------------------------------------------------------
# configuration


@dataclass
class SynthConfig:
    preset: str = "cosmetics-like"
    n_users: int = 5000
    max_events: int | None = None
    date_range: list = field(default_factory=lambda: list(synth.DEFAULT_RANGE))
    seed: int | None = None


@dataclass
class IngestConfig:
    cleaning: str | None = None  # cosmetics | electronics | none; default from dataset
    chunk_rows: int = 100_000
    skip_malformed: bool = False


@dataclass
class FeaturizeConfig:
    max_groups: int | None = 200_000
    partitions: int = 32


@dataclass
class RankConfig:
    top_k: int = 8
    trees: int = 100
    max_depth: int = 8
    min_leaf: int = 5
    max_rows: int = 100_000
    seed: int | None = None


@dataclass
class JourneyConfig:
    balance: str = "smote"
    compare_unbalanced: bool = True
    features: str | list = "ranked"  # ranked | preset | all | explicit list
    models: list = field(default_factory=lambda: ["logistic", "knn"])
    l2: float = 1e-4
    smote_k: int = 5
    folds: int = 5
    knn_candidates: list = field(default_factory=lambda: list(classify.KNN_CANDIDATES))
    knn_max_train: int = 20_000
    seed: int | None = None


@dataclass
class SessionConfig:
    models: list = field(default_factory=lambda: ["features", "baseline"])
    balance: str = "smote"
    layers: list = field(default_factory=lambda: [40])
    epochs: int = 20
    batch: int = 64
    lr: float = 1e-3
    window: int = sequence.DEFAULT_WINDOW
    grid: bool = False
    max_samples: int = 20_000
    seed: int | None = None


@dataclass
class ClusterConfig:
    k: int | None = 5  # None: take the elbow choice
    k_range: list = field(default_factory=lambda: [1, 10])
    space: str = "features"  # features | tsne
    features: str | list = "preset"
    n_init: int = 30
    elbow_sample: int = 50_000
    embed: bool = True
    tsne_sample: int = 5000
    perplexity: float = 30.0
    iterations: int = 1000
    seed: int | None = None


_SECTIONS = {
    "synth": SynthConfig,
    "ingest": IngestConfig,
    "featurize": FeaturizeConfig,
    "rank": RankConfig,
    "train_journey": JourneyConfig,
    "train_session": SessionConfig,
    "cluster": ClusterConfig,
}


@dataclass
class RunConfig:
    dataset: str = "synthetic"
    input: str | None = None
    output_dir: str = "artifacts"
    seed: int = 42
    stages: list = field(default_factory=lambda: list(DEFAULT_STAGES))
    memory_cap_mb: float | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    featurize: FeaturizeConfig = field(default_factory=FeaturizeConfig)
    rank: RankConfig = field(default_factory=RankConfig)
    train_journey: JourneyConfig = field(default_factory=JourneyConfig)
    train_session: SessionConfig = field(default_factory=SessionConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ValueError(f"dataset must be one of {DATASETS}")
        bad = [s for s in self.stages if s not in STAGES]
        if bad:
            raise ValueError(f"unknown stages {bad}")
        if self.train_journey.balance not in BALANCE_MODES:
            raise ValueError(f"train_journey.balance must be one of {BALANCE_MODES}")
        if self.train_session.balance not in SESSION_BALANCE_MODES:
            raise ValueError(f"train_session.balance must be one of {SESSION_BALANCE_MODES}")
        if self.cluster.space not in ("features", "tsne"):
            raise ValueError("cluster.space must be 'features' or 'tsne'")

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        d = dict(d)
        top = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - top
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for name, sub in _SECTIONS.items():
            if name in d:
                body = d[name] or {}
                allowed = {f.name for f in dataclasses.fields(sub)}
                extra = set(body) - allowed
                if extra:
                    raise ValueError(f"unknown keys in {name!r}: {sorted(extra)}")
                d[name] = sub(**body)
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        body = self.to_dict()
        body.pop("output_dir")
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]

    @property
    def cleaning(self) -> str:
        if self.ingest.cleaning:
            return self.ingest.cleaning
        if self.dataset == "synthetic":
            return "electronics" if self.synth.preset in synth.ELECTRONICS_PRESETS else "cosmetics"
        return self.dataset

    @property
    def feature_family(self) -> str:
        return "electronics" if self.cleaning == "electronics" else "cosmetics"


def derive_seed(root: int, name: str) -> int:
    """Per-stage seed from the root seed and the stage name."""
    return int(np.random.default_rng([root, zlib.crc32(name.encode())]).integers(0, 2**31 - 1))


def resolve_seeds(cfg: RunConfig) -> dict[str, int]:
    seeds = {"root": cfg.seed}
    for stage, section in (("synth", cfg.synth), ("rank", cfg.rank), ("train-journey", cfg.train_journey),
                           ("train-session", cfg.train_session), ("cluster", cfg.cluster)):
        seeds[stage] = section.seed if section.seed is not None else derive_seed(cfg.seed, stage)
    return seeds


# --------------------------------------------------------------------------
# stats


@dataclass
class DatasetStats:
    events: int
    purchase_events: int
    sessions: int
    purchase_sessions: int
    journeys: int
    purchase_journeys: int

    @staticmethod
    def _share(k, n):
        return 100.0 * k / n if n else 0.0

    @staticmethod
    def _ratio(k, n):
        return (n - k) / k if k else float("inf")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for level in ("events", "sessions", "journeys"):
            n, k = getattr(self, level), getattr(self, f"purchase_{level}")
            out[f"{level}_purchase_pct"] = self._share(k, n)
            ratio = self._ratio(k, n)
            out[f"{level}_imbalance"] = ratio if np.isfinite(ratio) else None
        return out

    def table(self) -> str:
        d = self.to_dict()
        lines = [f"{'level':<10}{'records':>12}{'purchase':>12}{'PR(%)':>10}{'neg:pos':>10}"]
        for level in ("events", "sessions", "journeys"):
            imb = d[f"{level}_imbalance"]
            lines.append(
                f"{level:<10}{d[level]:>12}{d['purchase_' + level]:>12}{d[level + '_purchase_pct']:>10.2f}"
                f"{(f'{imb:.2f}' if imb is not None else '-'):>10}"
            )
        return "\n".join(lines)


def stats(events: Iterable[ingest.RawEvent], session_labels=None, journey_labels=None) -> DatasetStats:
    """Purchase shares at event, session and journey level.

    Session and journey labels may be supplied (e.g. from feature caches);
    otherwise they are derived from the events.
    """
    n = buys = 0
    sess_all, sess_buy, jour_all, jour_buy = set(), set(), set(), set()
    derive = session_labels is None or journey_labels is None
    for e in events:
        n += 1
        bought = e.event_type == ingest.EventType.PURCHASE
        buys += bought
        if derive:
            jk = (e.user_id, e.product_id)
            jour_all.add(jk)
            if e.user_session:
                sess_all.add(e.user_session)
            if bought:
                jour_buy.add(jk)
                if e.user_session:
                    sess_buy.add(e.user_session)
    if n == 0:
        raise ValueError("no events")

    def count(labels):
        total = pos = 0
        for chunk in labels:
            chunk = np.asarray(chunk)
            total += len(chunk)
            pos += int(chunk.sum())
        return total, pos

    s_n, s_k = count(session_labels) if session_labels is not None else (len(sess_all), len(sess_buy))
    j_n, j_k = count(journey_labels) if journey_labels is not None else (len(jour_all), len(jour_buy))
    return DatasetStats(n, buys, s_n, s_k, j_n, j_k)


def _label_chunks(path: Path, chunk: int = 500_000):
    for part in pd.read_csv(path, usecols=["purchased"], chunksize=chunk):
        yield part["purchased"].to_numpy()


# --------------------------------------------------------------------------
# stage plumbing


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Context:
    cfg: RunConfig
    out: Path
    inputs: dict = field(default_factory=dict)  # role -> path
    seeds: dict = field(default_factory=dict)

    @property
    def meta(self) -> dict:
        return {"config_hash": self.cfg.digest(), "seeds": self.seeds}


def _write_json(path: Path, body: dict, ctx: Context) -> Path:
    body = {**body, "run": ctx.meta}
    path.write_text(json.dumps(body, indent=2, sort_keys=True, allow_nan=False, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _need(ctx: Context, role: str) -> Path:
    p = ctx.inputs.get(role)
    if p is None or not Path(p).exists():
        raise FileNotFoundError(f"missing {role} input ({p})")
    return Path(p)


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _subsample(n: int, cap: int, rng: np.random.Generator) -> np.ndarray:
    if n <= cap:
        return np.arange(n)
    return np.sort(rng.choice(n, cap, replace=False))


def _stratified_cap(y: np.ndarray, cap: int, rng: np.random.Generator) -> np.ndarray:
    if len(y) <= cap:
        return np.arange(len(y))
    keep = []
    for c in (0, 1):
        idx = np.flatnonzero(y == c)
        take = max(1, int(round(cap * len(idx) / len(y))))
        keep.append(rng.choice(idx, min(take, len(idx)), replace=False))
    return np.sort(np.concatenate(keep))


# --------------------------------------------------------------------------
# stages


def stage_synth(ctx: Context) -> dict:
    c = ctx.cfg.synth
    path = ctx.out / "events.synthetic.csv"
    synth.write_synthetic(
        path, synth.preset(c.preset), c.n_users, tuple(c.date_range), ctx.seeds["synth"],
        electronics=c.preset in synth.ELECTRONICS_PRESETS, max_events=c.max_events,
    )
    return {"raw": path}


def stage_ingest(ctx: Context) -> dict:
    src = _need(ctx, "raw")
    rules = ingest.PRESETS[ctx.cfg.cleaning]
    errors: list = []
    events = ingest.iter_events(src, skip_malformed=ctx.cfg.ingest.skip_malformed, errors=errors)
    path = ctx.out / "events.csv"
    st = ingest.write_event_cache(path, events, rules)
    if not st.reconciles():
        raise RuntimeError("cleaning counts do not reconcile")
    log.info("ingest: read %d, emitted %d, dropped %s, malformed %d", st.rows_read, st.rows_emitted, st.rows_dropped, len(errors))
    return {"events": path}


def stage_featurize(ctx: Context) -> dict:
    src = _need(ctx, "events")
    c = ctx.cfg.featurize
    spill = ctx.out / ".spill"
    engine = {"max_groups": c.max_groups, "spill_dir": spill, "partitions": c.partitions}
    g_sess = aggregate.GroupBy(aggregate.SessionAggregator(), **engine)
    g_jour = aggregate.GroupBy(aggregate.JourneyAggregator(), **engine)
    for chunk in ingest.read_chunks(src, ctx.cfg.ingest.chunk_rows):
        g_sess.feed(chunk)
        g_jour.feed(chunk)
    meta = {"source": src.name, "spills": {"sessions": g_sess.spills, "journeys": g_jour.spills}}
    s_path, j_path = ctx.out / "sessions.csv", ctx.out / "journeys.csv"
    ns = aggregate.write_records(s_path, g_sess.results(), aggregate.SessionFeatures, meta)
    nj = aggregate.write_records(j_path, g_jour.results(), aggregate.JourneyFeatures, meta)
    log.info("featurize: %d sessions, %d journeys", ns, nj)
    return {"sessions": s_path, "journeys": j_path}


def stage_stats(ctx: Context) -> dict:
    ev = _need(ctx, "events")
    s_lab = _label_chunks(ctx.inputs["sessions"]) if "sessions" in ctx.inputs else None
    j_lab = _label_chunks(ctx.inputs["journeys"]) if "journeys" in ctx.inputs else None
    st = stats(ingest.iter_events(ev), s_lab, j_lab)
    out = _write_json(ctx.out / "stats.json", st.to_dict(), ctx)
    (ctx.out / "stats.txt").write_text(st.table() + "\n")
    return {"stats": out}


def _journey_columns(ctx: Context, frame: pd.DataFrame, choice) -> list[str]:
    if isinstance(choice, list):
        cols = list(choice)
    elif choice == "all":
        cols = list(aggregate.JOURNEY_FEATURES)
    elif choice == "preset":
        cols = list(aggregate.SELECTED_JOURNEY_FEATURES[ctx.cfg.feature_family])
    elif choice == "ranked":
        ranking = json.loads(_need(ctx, "ranking").read_text())
        cols = list(ranking["selected"])
    else:
        raise ValueError(f"unknown feature choice {choice!r}")
    missing = [c for c in cols if c not in frame.columns]
    if missing:
        raise KeyError(f"feature columns not in journeys: {missing}")
    return cols


def stage_rank(ctx: Context) -> dict:
    c = ctx.cfg.rank
    frame = aggregate.read_records(_need(ctx, "journeys"))
    names = [n for n in aggregate.JOURNEY_FEATURES if n in frame.columns]
    fm = aggregate.encode_matrix(frame, names)
    rng = np.random.default_rng(ctx.seeds["rank"])
    rows = _stratified_cap(fm.labels, c.max_rows, rng)
    params = features.ForestParams(c.trees, c.max_depth, c.min_leaf, seed=ctx.seeds["rank"])
    report = features.rank_features(fm.values[rows], fm.labels[rows], names, min(c.top_k, len(names)), params)
    body = json.loads(report.to_json())
    body["rows_used"] = int(len(rows))
    out = _write_json(ctx.out / "ranking.json", body, ctx)
    (ctx.out / "ranking.txt").write_text(report.table() + "\n")
    return {"ranking": out}


def _confusion_csv(path: Path, rows) -> None:
    lines = ["model,tp,fp,fn,tn"]
    lines += [f"{name},{r.tp},{r.fp},{r.fn},{r.tn}" for name, r in rows]
    path.write_text("\n".join(lines) + "\n")


def train_journey_models(X, y, c: JourneyConfig, seed: int, columns=None):
    """Table of (row name, EvalReport) plus details for the configured balance mode."""
    (tr_i, te_i) = classify.split_indices(y, seed)
    Xtr, ytr, Xte, yte = X[tr_i], y[tr_i], X[te_i], y[te_i]
    std = aggregate.fit_standardization(Xtr)
    Ztr, Zte = std.apply(Xtr), std.apply(Xte)
    modes = ["none", c.balance] if c.compare_unbalanced and c.balance != "none" else [c.balance]
    hyper = classify.LogisticHyper(l2=c.l2)
    rows, details = [], {"train_rows": int(len(ytr)), "test_rows": int(len(yte))}
    label = {"none": "unbalanced", "weights": "class weights", "smote": "SMOTE"}
    for mode in modes:
        weights = imbalance.sample_weights(ytr) if mode == "weights" else None
        if mode == "smote":
            bal = imbalance.smote(Ztr, ytr, k=c.smote_k, seed=seed)
            Zb, yb = bal.X, bal.y
            details["synthetic_rows"] = bal.synthetic_count
        else:
            Zb, yb = Ztr, ytr
        if "logistic" in c.models:
            m = classify.train_logistic(Zb, yb, weights, hyper, columns)
            rep = classify.evaluate(classify.predict_labels(m, Zte), yte)
            rows.append((f"Logistic Regression ({label[mode]})", rep))
            details[f"logistic_{mode}"] = {"coef": m.coef.tolist(), "intercept": m.intercept, "converged": m.converged,
                                           "iterations": len(m.loss_log) - 1}
        if "knn" in c.models:
            rng = np.random.default_rng([seed, 7])
            keep = _stratified_cap(ytr, c.knn_max_train, rng)
            Zk, yk = Ztr[keep], ytr[keep]
            cw = imbalance.class_weights(yk) if mode == "weights" else None
            resample = None
            if mode == "smote":
                def resample(a, b, fold):
                    o = imbalance.smote(a, b, k=c.smote_k, seed=seed + 1 + fold)
                    return o.X, o.y
            sel = classify.knn_select_k(Zk, yk, c.folds, c.knn_candidates, seed, "recall", resample, cw)
            if mode == "smote":
                o = imbalance.smote(Zk, yk, k=c.smote_k, seed=seed)
                Zk, yk = o.X, o.y
            pred = classify.knn_predict(Zk, yk, Zte, sel.best_k, cw)
            rows.append((f"KNN ({label[mode]})", classify.evaluate(pred, yte)))
            details[f"knn_{mode}"] = {"k": sel.best_k, "cv_recall": {str(k): v for k, v in sel.scores.items()},
                                      "train_rows": int(len(keep))}
    return rows, details


def stage_train_journey(ctx: Context) -> dict:
    c = ctx.cfg.train_journey
    frame = aggregate.read_records(_need(ctx, "journeys"))
    cols = _journey_columns(ctx, frame, c.features)
    fm = aggregate.encode_matrix(frame, cols)
    rows, details = train_journey_models(fm.values, fm.labels, c, ctx.seeds["train-journey"], cols)
    body = json.loads(classify.reports_json(rows, {"features": cols, "balance": c.balance, "details": details}))
    out = _write_json(ctx.out / "journey_eval.json", body, ctx)
    (ctx.out / "journey_eval.txt").write_text(classify.format_table(rows, ("recall", "accuracy", "precision", "f1")) + "\n")
    _confusion_csv(ctx.out / "confusion_journey.csv", rows)
    return {"journey_eval": out}


def _cap_dataset(data: sequence.SequenceDataset, cap: int, seed: int) -> sequence.SequenceDataset:
    idx = _stratified_cap(data.y, cap, np.random.default_rng([seed, 3]))
    return data if len(idx) == len(data) else data.subset(idx)


def stage_train_session(ctx: Context) -> dict:
    c = ctx.cfg.train_session
    seed = ctx.seeds["train-session"]
    cfg = sequence.SequenceConfig(tuple(c.layers), c.epochs, c.batch, c.lr, seed=seed)
    rows, details = [], {}
    if "features" in c.models or c.grid:
        frame = aggregate.read_records(_need(ctx, "sessions"))
        samples = sequence.build_feature_sequences(frame.to_dict("records"), c.window)
        feat = _cap_dataset(sequence.feature_dataset(samples, window=c.window), c.max_samples, seed)
        details["features_samples"] = len(feat)
    if "features" in c.models:
        run = sequence.train_sequence(feat, cfg, c.balance)
        rows.append((f"Bi-LSTM session features ({sequence.layer_label(c.layers)})", run.report))
        details["features_loss"] = run.loss_history
    if "baseline" in c.models:
        base = sequence.baseline_dataset(sequence.build_baseline_sequences(ingest.iter_events(_need(ctx, "events"))))
        base = _cap_dataset(base, c.max_samples, seed)
        run = sequence.train_sequence(base, cfg, c.balance)
        rows.append((f"Bi-LSTM event codes ({sequence.layer_label(c.layers)})", run.report))
        details["baseline_samples"] = len(base)
        details["baseline_balance"] = run.balance
        details["baseline_loss"] = run.loss_history
    out = _write_json(ctx.out / "session_eval.json",
                      json.loads(classify.reports_json(rows, {"balance": c.balance, "details": details})), ctx)
    (ctx.out / "session_eval.txt").write_text(classify.format_table(rows, ("recall", "accuracy", "precision", "f1")) + "\n")
    _confusion_csv(ctx.out / "confusion_session.csv", rows)
    result = {"session_eval": out}
    if c.grid:
        grid = sequence.run_ablation(feat, cfg, c.balance)
        result["ablation"] = _write_json(ctx.out / "ablation.json", json.loads(classify.reports_json(grid)), ctx)
        (ctx.out / "ablation.txt").write_text(sequence.ablation_table(grid) + "\n")
    return result


def stage_cluster(ctx: Context) -> dict:
    c = ctx.cfg.cluster
    seed = ctx.seeds["cluster"]
    frame = aggregate.read_records(_need(ctx, "journeys"))
    cols = _journey_columns(ctx, frame, c.features)
    fm = aggregate.encode_matrix(frame, cols, standardize=True)
    X = fm.values
    rng = np.random.default_rng([seed, 1])
    lo, hi = c.k_range
    sample = _subsample(len(X), c.elbow_sample, rng)
    elbow = segmentation.elbow_k(X[sample], range(lo, min(hi, len(sample)) + 1), seed, c.n_init)
    k = c.k if c.k is not None else elbow.k
    embedding = None
    if c.embed or c.space == "tsne":
        emb = segmentation.tsne(X, c.perplexity, c.iterations, seed, c.tsne_sample)
        embedding = emb
    if c.space == "tsne":
        rows = embedding.rows
        km = segmentation.kmeans(embedding.embedding, k, seed, c.n_init)
        journeys = frame.iloc[rows]
        assign = km.assignments
    else:
        km = segmentation.kmeans(X, k, seed, c.n_init)
        journeys = frame
        assign = km.assignments
    report = segmentation.tag_archetypes(segmentation.cluster_report(assign, journeys, cols))
    body = report.to_dict()
    body.update({"k": k, "elbow_k": elbow.k, "no_knee": elbow.no_knee, "space": c.space,
                 "distortion": km.distortion, "exact_pr_check": report.exact_weighted_pr() == Fraction(report.total_purchases, report.total)})
    out = _write_json(ctx.out / "cluster_report.json", body, ctx)
    (ctx.out / "cluster_report.txt").write_text(report.table() + "\n")
    (ctx.out / "distortion.csv").write_text(elbow.csv())
    if embedding is not None:
        ids = (km.assignments if c.space == "tsne" else km.assignments[embedding.rows])
        lab = frame["purchased"].to_numpy()[embedding.rows]
        lines = ["row,x,y,cluster,purchased"]
        lines += [f"{r},{float(x)!r},{float(y)!r},{int(i)},{int(p)}" for r, (x, y), i, p in zip(embedding.rows, embedding.embedding, ids, lab)]
        (ctx.out / "embedding.csv").write_text("\n".join(lines) + "\n")
    return {"cluster_report": out}


STAGE_FUNCS = {
    "synth": stage_synth,
    "ingest": stage_ingest,
    "featurize": stage_featurize,
    "stats": stage_stats,
    "rank": stage_rank,
    "train-journey": stage_train_journey,
    "train-session": stage_train_session,
    "cluster": stage_cluster,
}

# config sections and upstream roles each stage depends on
_STAGE_INPUTS = {
    "synth": ((), "synth"),
    "ingest": (("raw",), "ingest"),
    "featurize": (("events",), "featurize"),
    "stats": (("events", "sessions", "journeys"), None),
    "rank": (("journeys",), "rank"),
    "train-journey": (("journeys", "ranking"), "train_journey"),
    "train-session": (("events", "sessions"), "train_session"),
    "cluster": (("journeys", "ranking"), "cluster"),
}


def _stage_key(ctx: Context, stage: str) -> str:
    roles, section = _STAGE_INPUTS[stage]
    body = {
        "stage": stage,
        "cleaning": ctx.cfg.cleaning if stage == "ingest" else None,
        "chunk_rows": ctx.cfg.ingest.chunk_rows if stage == "featurize" else None,
        "section": dataclasses.asdict(getattr(ctx.cfg, section)) if section else None,
        "seeds": ctx.seeds,
        "inputs": {r: file_digest(Path(ctx.inputs[r])) for r in roles if r in ctx.inputs and Path(ctx.inputs[r]).exists()},
        "config_hash": ctx.cfg.digest(),
    }
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def peak_rss_mb() -> float:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0


def run_pipeline(cfg: RunConfig, use_cache: bool = True) -> dict:
    """Run the configured stages in order; returns the manifest."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(cfg, out, seeds=resolve_seeds(cfg))
    if cfg.input:
        ctx.inputs["raw"] = Path(cfg.input)
    manifest_path = out / "manifest.json"
    old = json.loads(manifest_path.read_text()) if manifest_path.exists() else {}
    old_stages = old.get("stages", {})
    manifest = {"config_hash": cfg.digest(), "seeds": ctx.seeds, "config": cfg.to_dict(), "stages": {}}
    order = [s for s in STAGES if s in cfg.stages]
    if "synth" in order and cfg.input:
        order.remove("synth")
    for stage in order:
        try:
            key = _stage_key(ctx, stage)
            prev = old_stages.get(stage)
            hit = (
                use_cache
                and prev is not None
                and prev["key"] == key
                and all((out / f).exists() and file_digest(out / f) == h for f, h in prev["outputs"].items())
            )
            if hit:
                produced = {r: out / f for r, f in prev["roles"].items()}
                log.info("%s: cache hit", stage)
            else:
                log.info("%s: running", stage)
                produced = STAGE_FUNCS[stage](ctx)
            ctx.inputs.update(produced)
            files = sorted({p.name for p in out.iterdir() if p.is_file()} - {"manifest.json", "run.log"})
            mine = [f for f in files if _owned_by(stage, f)]
            manifest["stages"][stage] = {
                "key": key,
                "cache_hit": bool(hit),
                "roles": {r: Path(p).name for r, p in produced.items()},
                "outputs": {f: file_digest(out / f) for f in mine},
            }
        except Exception as exc:
            raise StageError(stage, exc) from exc
        rss = peak_rss_mb()
        log.info("%s: peak rss %.0f MB", stage, rss)
        if cfg.memory_cap_mb is not None and rss > cfg.memory_cap_mb:
            raise StageError(stage, MemoryError(f"peak rss {rss:.0f} MB over cap {cfg.memory_cap_mb} MB"))
    manifest["peak_rss_mb"] = round(peak_rss_mb(), 1)
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


_OUTPUTS = {
    "synth": ("events.synthetic.csv",),
    "ingest": ("events.csv",),
    "featurize": ("sessions.csv", "journeys.csv"),
    "stats": ("stats.",),
    "rank": ("ranking.",),
    "train-journey": ("journey_eval.", "confusion_journey.csv"),
    "train-session": ("session_eval.", "confusion_session.csv", "ablation."),
    "cluster": ("cluster_report.", "distortion.csv", "embedding.csv"),
}


def _owned_by(stage: str, name: str) -> bool:
    return any(name.startswith(p) for p in _OUTPUTS[stage])


# --------------------------------------------------------------------------
# argument parsing


def _base_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _single(stage: str, args, inputs: dict, mutate=None) -> int:
    cfg = _base_config(args)
    cfg.output_dir = args.out
    if mutate:
        mutate(cfg)
    cfg.__post_init__()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = Context(cfg, out, {k: Path(v) for k, v in inputs.items() if v}, resolve_seeds(cfg))
    try:
        produced = STAGE_FUNCS[stage](ctx)
    except Exception as exc:
        raise StageError(stage, exc) from exc
    for role, path in produced.items():
        print(f"{role}: {path}")
    txt = {"stats": "stats.txt", "rank": "ranking.txt", "train-journey": "journey_eval.txt",
           "train-session": "session_eval.txt", "cluster": "cluster_report.txt"}.get(stage)
    if txt and (out / txt).exists():
        print((out / txt).read_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clickjourney", description="Clickstream purchase prediction and shopper segmentation.")
    p.add_argument("--log-level", default="INFO")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default="artifacts"):
        sp.add_argument("--config", help="JSON run configuration supplying defaults")
        sp.add_argument("--out", default=out_default, help="output directory")
        sp.add_argument("--seed", type=int, help="root seed (default 42)")
        return sp

    sp = common(sub.add_parser("ingest", help="parse and clean a raw event file"))
    sp.add_argument("--input", required=True)
    sp.add_argument("--dataset", choices=DATASETS, default="cosmetics")
    sp.add_argument("--cleaning", choices=sorted(ingest.PRESETS))
    sp.add_argument("--skip-malformed", action="store_true")

    sp = common(sub.add_parser("stats", help="purchase shares per level"))
    sp.add_argument("--events", required=True)
    sp.add_argument("--sessions")
    sp.add_argument("--journeys")

    sp = common(sub.add_parser("featurize", help="session and journey feature caches"))
    sp.add_argument("--events", required=True)
    sp.add_argument("--max-groups", type=int)
    sp.add_argument("--partitions", type=int)
    sp.add_argument("--chunk-rows", type=int)

    sp = common(sub.add_parser("rank", help="Fisher and forest feature ranking"))
    sp.add_argument("--journeys", required=True)
    sp.add_argument("--top-k", type=int)
    sp.add_argument("--trees", type=int)

    sp = common(sub.add_parser("train-journey", help="logistic regression and KNN on journeys"))
    sp.add_argument("--journeys", required=True)
    sp.add_argument("--ranking")
    sp.add_argument("--balance", choices=BALANCE_MODES)
    sp.add_argument("--features", help="ranked | preset | all | comma-separated names")
    sp.add_argument("--dataset", choices=DATASETS)

    sp = common(sub.add_parser("train-session", help="Bi-LSTM next-session purchase models"))
    sp.add_argument("--events")
    sp.add_argument("--sessions")
    sp.add_argument("--model", choices=("features", "baseline", "both"), default="both")
    sp.add_argument("--balance", choices=SESSION_BALANCE_MODES)
    sp.add_argument("--layers", help="comma-separated widths, e.g. 40,20")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--grid", action="store_true", help="run the layer ablation grid")

    sp = common(sub.add_parser("cluster", help="k-means segmentation and cluster report"))
    sp.add_argument("--journeys", required=True)
    sp.add_argument("--k", type=int, help="cluster count (default: 5; 0 takes the elbow choice)")
    sp.add_argument("--k-range", type=int, nargs=2)
    sp.add_argument("--space", choices=("features", "tsne"))
    sp.add_argument("--no-embed", action="store_true")
    sp.add_argument("--tsne-sample", type=int)
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--dataset", choices=DATASETS)

    sp = common(sub.add_parser("synth", help="write a synthetic event file"))
    sp.add_argument("--preset", choices=sorted(synth.PRESETS), default="cosmetics-like")
    sp.add_argument("--users", type=int, default=5000)
    sp.add_argument("--events", type=int, help="target event count (sets users, truncates)")

    sp = sub.add_parser("run", help="run the configured pipeline")
    sp.add_argument("--config", help="JSON run configuration")
    sp.add_argument("--out", help="override output_dir")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--no-cache", action="store_true")
    return p


def _set(obj, **kw):
    for k, v in kw.items():
        if v is not None:
            setattr(obj, k, v)


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "run":
        cfg = _base_config(args)
        if args.out:
            cfg.output_dir = args.out
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(out / "run.log", mode="w")
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        logging.getLogger().addHandler(handler)
        try:
            manifest = run_pipeline(cfg, use_cache=not args.no_cache)
        finally:
            logging.getLogger().removeHandler(handler)
            handler.close()
        for stage, info in manifest["stages"].items():
            print(f"{stage:<14} {'cached' if info['cache_hit'] else 'ran':<7} {', '.join(info['outputs'])}")
        print(f"peak rss {manifest['peak_rss_mb']} MB")
        return 0
    if cmd == "ingest":
        def m(cfg):
            cfg.dataset = args.dataset
            _set(cfg.ingest, cleaning=args.cleaning)
            cfg.ingest.skip_malformed = cfg.ingest.skip_malformed or args.skip_malformed
        return _single("ingest", args, {"raw": args.input}, m)
    if cmd == "stats":
        return _single("stats", args, {"events": args.events, "sessions": args.sessions, "journeys": args.journeys})
    if cmd == "featurize":
        def m(cfg):
            _set(cfg.featurize, max_groups=args.max_groups, partitions=args.partitions)
            _set(cfg.ingest, chunk_rows=args.chunk_rows)
        return _single("featurize", args, {"events": args.events}, m)
    if cmd == "rank":
        return _single("rank", args, {"journeys": args.journeys}, lambda cfg: _set(cfg.rank, top_k=args.top_k, trees=args.trees))
    if cmd == "train-journey":
        def m(cfg):
            _set(cfg, dataset=args.dataset)
            _set(cfg.train_journey, balance=args.balance)
            if args.features:
                f = args.features
                cfg.train_journey.features = f if f in ("ranked", "preset", "all") else f.split(",")
            elif not args.ranking and cfg.train_journey.features == "ranked":
                cfg.train_journey.features = "preset"
        return _single("train-journey", args, {"journeys": args.journeys, "ranking": args.ranking}, m)
    if cmd == "train-session":
        def m(cfg):
            c = cfg.train_session
            c.models = ["features", "baseline"] if args.model == "both" else [args.model]
            _set(c, balance=args.balance, epochs=args.epochs)
            if args.layers:
                c.layers = [int(w) for w in args.layers.split(",")]
            c.grid = c.grid or args.grid
        return _single("train-session", args, {"events": args.events, "sessions": args.sessions}, m)
    if cmd == "cluster":
        def m(cfg):
            c = cfg.cluster
            _set(cfg, dataset=args.dataset)
            if args.k is not None:
                c.k = args.k or None
            _set(c, space=args.space, tsne_sample=args.tsne_sample, iterations=args.iterations)
            if args.k_range:
                c.k_range = list(args.k_range)
            c.embed = c.embed and not args.no_embed
        return _single("cluster", args, {"journeys": args.journeys}, m)
    if cmd == "synth":
        def m(cfg):
            cfg.synth.preset = args.preset
            specs = synth.preset(args.preset)
            cfg.synth.n_users = synth.users_for_events(specs, args.events) if args.events else args.users
            cfg.synth.max_events = args.events
        return _single("synth", args, {}, m)
    raise AssertionError(cmd)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except StageError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
