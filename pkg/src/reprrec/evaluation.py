"""Fold protocol and RMSE scoring.

Each user's ratings are dealt into five folds.  Fold 5 tunes neighbourhood
sizes, embedding hyperparameters and hybrid weights (training on folds
1-4) and is then discarded; the tuned configuration is scored by 4-fold
cross-validation over folds 1-4.  Embeddings are retrained in every round
from sentences built only out of that round's training events.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .config import stage_seed
from .corpus import ItemMetadata, RatingRecord, TagRecord, build_sentences, build_vocabulary
from .embedding import Architecture, EmbeddingConfig, Loss, train
from .hybrid import HybridWeights, fit_weights
from .recommender import MODEL_NAMES, RatingsStore, make_spec, predict_batch_multi_k

log = logging.getLogger(__name__)

N_FOLDS = 5
TUNING_FOLD = 5
CV_FOLDS = (1, 2, 3, 4)
DEFAULT_KS = (5, 10, 20, 50, 100)


def rmse(predictions, truths) -> float:
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(truths, dtype=np.float64).ravel()
    if p.size == 0 or p.shape != t.shape:
        raise ValueError("rmse needs two non-empty sequences of equal length")
    return float(np.sqrt(np.mean((p - t) ** 2)))


@dataclass
class FoldAssignment:
    """``folds[e]`` is the fold (1..5) of rating event ``e``."""

    folds: np.ndarray
    seed: int

    def events(self, *folds: int) -> np.ndarray:
        return np.flatnonzero(np.isin(self.folds, folds))


def partition(records: Sequence[RatingRecord], seed: int = 0) -> FoldAssignment:
    """Shuffle each user's events and deal them round-robin into five folds,
    starting at a random fold so remainders do not pile onto fold 1."""
    by_user: dict = {}
    for e, r in enumerate(records):
        by_user.setdefault(r.user.key, []).append(e)
    rng = np.random.default_rng(seed)
    folds = np.zeros(len(records), dtype=np.int64)
    for key in sorted(by_user):
        events = np.asarray(by_user[key])
        order = rng.permutation(len(events))
        start = int(rng.integers(N_FOLDS))
        folds[events[order]] = (start + np.arange(len(events))) % N_FOLDS + 1
    return FoldAssignment(folds, seed)


@dataclass(frozen=True)
class EmbeddingGridPoint:
    dim: int = 100
    epochs: int = 5

    def label(self) -> str:
        return f"dim={self.dim},epochs={self.epochs}"


@dataclass
class ProtocolConfig:
    models: tuple[str, ...] = MODEL_NAMES
    ks: tuple[int, ...] = DEFAULT_KS
    grid: tuple[EmbeddingGridPoint, ...] = (EmbeddingGridPoint(),)
    window: int = 10
    negatives: int = 5
    lr_final: float = 1e-4
    min_count: int = 1
    max_actors: int = 5
    scale: tuple[float, float] = (0.5, 5.0)
    neighbor_selection: str = "filter_first"
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        self.models = tuple(m.upper() for m in self.models)
        for m in self.models:
            if m not in MODEL_NAMES:
                raise ValueError(f"unknown model {m!r}")
        if not self.ks or not self.grid:
            raise ValueError("the k grid and the embedding grid must be non-empty")

    def archs_needed(self) -> set[str]:
        need = set()
        for m in self.models:
            if m.endswith("CB"):
                need.add("cbow")
            elif m.endswith("SG"):
                need.add("sg")
        return need


@dataclass
class RoundAudit:
    """Which rating events fed which part of one train/test round."""

    name: str
    train_events: list[int]
    corpus_events: list[int]
    test_events: list[int]


def _tags_for(tags: Sequence[TagRecord], records, train_idx, held_out_idx):
    held = {(records[e].user, records[e].movie) for e in held_out_idx}
    allowed = {(records[e].user, records[e].movie) for e in train_idx} - held
    return [t for t in tags if (t.user, t.movie) in allowed]


def _train_stores(records, tags, metadata, train_idx, held_out_idx, cfg: ProtocolConfig,
                  point: EmbeddingGridPoint, round_name: str):
    """Embedding stores for every architecture the models need."""
    need = cfg.archs_needed()
    if not need:
        return {}, []
    train_records = [records[e] for e in train_idx]
    sentences = build_sentences(train_records, _tags_for(tags, records, train_idx, held_out_idx),
                                metadata, cfg.max_actors)
    vocab = build_vocabulary(sentences, cfg.min_count)
    stores = {}
    for arch in sorted(need):
        config = EmbeddingConfig(
            model=Architecture(arch), loss=Loss.NEGATIVE_SAMPLING, dim=point.dim,
            window=cfg.window, epochs=point.epochs, negatives=cfg.negatives,
            lr_final=cfg.lr_final, workers=cfg.workers,
            seed=stage_seed(cfg.seed, f"embed/{round_name}/{arch}/{point.label()}"),
        )
        stores[arch] = train(sentences, vocab, config).store()
    return stores, list(map(int, train_idx))


def _component_predictions(records, train_idx, test_idx, stores, cfg: ProtocolConfig, models, ks):
    """``{model: {k: predictions array}}`` for the test events."""
    train_store = RatingsStore.from_records([records[e] for e in train_idx], cfg.scale)
    pairs = [(records[e].user.raw, records[e].movie.raw) for e in test_idx]
    out = {}
    for m in models:
        spec = make_spec(m, max(ks), stores, neighbor_selection=cfg.neighbor_selection)
        preds = predict_batch_multi_k(pairs, spec, ks, train_store)
        out[m] = {k: np.array([p.value for p in preds[k]]) for k in ks}
    return out


@dataclass
class TuningResult:
    chosen: dict  # model -> {"k": int, "grid": int}
    tuning_rmse: dict  # model -> grid index -> k -> rmse
    best_rmse: dict  # model -> rmse at the chosen point
    weights: dict  # k -> HybridWeights
    hybrid_rmse: dict  # k -> rmse of the clamped blend on the tuning fold
    component_rmse_at_k: dict  # k -> model -> rmse at that model's chosen grid point
    audit: RoundAudit | None = None
    grid: tuple = ()


def tune(records: Sequence[RatingRecord], tags: Sequence[TagRecord], metadata: Sequence[ItemMetadata],
         assignment: FoldAssignment, cfg: ProtocolConfig) -> TuningResult:
    """Train on folds 1-4, score every (model, grid point, k) on fold 5."""
    train_idx = assignment.events(*CV_FOLDS)
    test_idx = assignment.events(TUNING_FOLD)
    if len(test_idx) == 0 or len(train_idx) == 0:
        raise ValueError("tuning needs non-empty training and tuning folds")
    truth = np.array([records[e].rating for e in test_idx])
    emb_models = [m for m in cfg.models if not m.endswith("CF")]
    cf_models = [m for m in cfg.models if m.endswith("CF")]

    table: dict = {m: {} for m in cfg.models}
    preds: dict = {m: {} for m in cfg.models}
    corpus_events: list[int] = []
    if cf_models:
        p = _component_predictions(records, train_idx, test_idx, {}, cfg, cf_models, cfg.ks)
        for m in cf_models:
            preds[m][0] = p[m]
            table[m][0] = {k: rmse(p[m][k], truth) for k in cfg.ks}
    for g, point in enumerate(cfg.grid if emb_models else ()):
        stores, corpus_events = _train_stores(records, tags, metadata, train_idx, test_idx,
                                              cfg, point, "tune")
        p = _component_predictions(records, train_idx, test_idx, stores, cfg, emb_models, cfg.ks)
        for m in emb_models:
            preds[m][g] = p[m]
            table[m][g] = {k: rmse(p[m][k], truth) for k in cfg.ks}

    chosen, best = {}, {}
    for m in cfg.models:
        # enumeration order: grid points, then k; strict < keeps the first
        best_val, best_key = np.inf, None
        for g in sorted(table[m]):
            for k in cfg.ks:
                if table[m][g][k] < best_val:
                    best_val, best_key = table[m][g][k], (g, k)
        chosen[m] = {"grid": best_key[0], "k": best_key[1]}
        best[m] = best_val

    weights, hybrid_rmse, comp_at_k = {}, {}, {}
    for k in cfg.ks:
        P = np.column_stack([preds[m][chosen[m]["grid"]][k] for m in cfg.models])
        w, _, _ = fit_weights(P, truth)
        weights[k] = HybridWeights(cfg.models, tuple(w))
        lo, hi = cfg.scale
        hybrid_rmse[k] = rmse(np.clip(P @ w, lo, hi), truth)
        comp_at_k[k] = {m: table[m][chosen[m]["grid"]][k] for m in cfg.models}

    audit = RoundAudit("tune", list(map(int, train_idx)), corpus_events, list(map(int, test_idx)))
    return TuningResult(chosen, table, best, weights, hybrid_rmse, comp_at_k, audit, tuple(cfg.grid))


@dataclass
class EvalReport:
    models: tuple[str, ...]
    ks: tuple[int, ...]
    per_fold: dict  # series -> k -> [rmse per fold]
    mean_rmse: dict  # series -> k -> mean of per-fold rmse
    pooled_rmse: dict  # series -> k -> rmse over all pooled residuals
    chosen: dict
    weights: dict  # k -> {model: alpha}
    n: int
    rounds: list[RoundAudit] = field(default_factory=list)
    tuning: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rounds"] = [asdict(r) for r in self.rounds]
        return d

    def to_json(self) -> str:
        def keys_to_str(obj):
            if isinstance(obj, dict):
                return {str(k): keys_to_str(v) for k, v in obj.items()}
            if isinstance(obj, (list, tuple)):
                return [keys_to_str(v) for v in obj]
            return obj

        return json.dumps(keys_to_str(self.to_dict()), indent=2, sort_keys=False)

    def table(self) -> str:
        series = list(self.mean_rmse)
        width = max(8, *(len(s) for s in series))
        lines = ["model".ljust(width) + "".join(f"{'k=' + str(k):>10}" for k in self.ks)]
        for s in series:
            lines.append(s.ljust(width) + "".join(f"{self.mean_rmse[s][k]:>10.4f}" for k in self.ks))
        if self.weights:
            lines.append("")
            lines.append("hybrid weights".ljust(width + 6) + "".join(f"{m:>8}" for m in self.models))
            for k in self.ks:
                row = self.weights[k]
                lines.append(f"k={k}".ljust(width + 6) + "".join(f"{row[m]:>8.3f}" for m in self.models))
        lines.append(f"\nscored pairs n={self.n}")
        return "\n".join(lines)


def cross_validate(records: Sequence[RatingRecord], tags: Sequence[TagRecord],
                   metadata: Sequence[ItemMetadata], assignment: FoldAssignment,
                   cfg: ProtocolConfig, tuning: TuningResult) -> EvalReport:
    """4-fold cross-validation over folds 1-4 with the tuned configuration.

    Every model is scored at every k (its embedding grid point fixed to the
    tuned one); the hybrid at each k blends the components with the weights
    fitted for that k.
    """
    models = cfg.models
    with_hybrid = len(models) > 1
    series = list(models) + (["HYBRID"] if with_hybrid else [])
    per_fold = {s: {k: [] for k in cfg.ks} for s in series}
    residuals = {s: {k: [] for k in cfg.ks} for s in series}
    rounds, n = [], 0
    lo, hi = cfg.scale

    for f in CV_FOLDS:
        train_idx = assignment.events(*[g for g in CV_FOLDS if g != f])
        test_idx = assignment.events(f)
        if len(test_idx) == 0:
            raise ValueError(f"fold {f} is empty")
        held_out = np.concatenate([test_idx, assignment.events(TUNING_FOLD)])
        truth = np.array([records[e].rating for e in test_idx])
        n += len(test_idx)
        preds: dict = {}
        corpus_events: list[int] = []
        by_grid: dict = {}
        for m in models:
            by_grid.setdefault(tuning.chosen[m]["grid"] if not m.endswith("CF") else None, []).append(m)
        for g, ms in sorted(by_grid.items(), key=lambda kv: -1 if kv[0] is None else kv[0]):
            stores = {}
            if g is not None:
                stores, used = _train_stores(records, tags, metadata, train_idx, held_out,
                                             cfg, tuning.grid[g], f"cv{f}")
                corpus_events = sorted(set(corpus_events) | set(used))
            preds.update(_component_predictions(records, train_idx, test_idx, stores, cfg, ms, cfg.ks))
        for k in cfg.ks:
            for m in models:
                per_fold[m][k].append(rmse(preds[m][k], truth))
                residuals[m][k].append(preds[m][k] - truth)
            if with_hybrid:
                P = np.column_stack([preds[m][k] for m in models])
                blended = np.clip(P @ tuning.weights[k].as_array(), lo, hi)
                per_fold["HYBRID"][k].append(rmse(blended, truth))
                residuals["HYBRID"][k].append(blended - truth)
        rounds.append(RoundAudit(f"cv{f}", list(map(int, train_idx)), corpus_events, list(map(int, test_idx))))
        log.info("fold %d done (%d test events)", f, len(test_idx))

    mean = {s: {k: float(np.mean(per_fold[s][k])) for k in cfg.ks} for s in series}
    pooled = {s: {k: float(np.sqrt(np.mean(np.concatenate(residuals[s][k]) ** 2))) for k in cfg.ks}
              for s in series}
    weights = ({k: dict(zip(tuning.weights[k].names, tuning.weights[k].alpha)) for k in cfg.ks}
               if with_hybrid else {})
    chosen = {m: {"k": tuning.chosen[m]["k"],
                  **({} if m.endswith("CF") else asdict(tuning.grid[tuning.chosen[m]["grid"]]))}
              for m in models}
    tuning_summary = {
        "rmse": {m: {k: tuning.tuning_rmse[m][tuning.chosen[m]["grid"]][k] for k in cfg.ks} for m in models},
        "hybrid_rmse": dict(tuning.hybrid_rmse) if with_hybrid else {},
    }
    return EvalReport(tuple(models), tuple(cfg.ks), per_fold, mean, pooled, chosen, weights, n,
                      rounds, tuning_summary)


def run_protocol(records, tags, metadata, cfg: ProtocolConfig) -> tuple[EvalReport, TuningResult, FoldAssignment]:
    assignment = partition(records, stage_seed(cfg.seed, "partition"))
    tuning = tune(records, tags, metadata, assignment, cfg)
    report = cross_validate(records, tags, metadata, assignment, cfg, tuning)
    if tuning.audit is not None:
        report.rounds.insert(0, tuning.audit)
    return report, tuning, assignment


def grid_points(dims: Sequence[int], epochs: Sequence[int]) -> tuple[EmbeddingGridPoint, ...]:
    return tuple(EmbeddingGridPoint(d, e) for d, e in itertools.product(dims, epochs))
