"""``reprrec`` command line: corpus building, training, queries, prediction,
hybrid weight fitting, evaluation and synthetic data."""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
import time
from contextlib import contextmanager

import numpy as np

from . import __version__, synth
from .config import ConfigError, read_kv, stage_seed
from .corpus import (CorpusError, EntityToken, Namespace, Vocabulary, build_sentences,
                     build_vocabulary, parse_metadata, parse_ratings, parse_tags,
                     read_sentences, write_sentences)
from .embedding import EmbeddingConfig, load_embeddings, save_embeddings, train
from .evaluation import DEFAULT_KS, ProtocolConfig, grid_points, run_protocol
from .hybrid import HybridWeights, blend, fit_weights
from .recommender import MODEL_NAMES, RatingsStore, make_spec, predict_batch
from .vectorspace import ArithmeticQuery, DegenerateQueryError, UnknownTokenError, combine

log = logging.getLogger("reprrec")


class CommandError(Exception):
    """A user-facing failure; the message is printed and the exit code is 1."""


# -- helpers ---------------------------------------------------------------

def _read(path: str, what: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise CommandError(f"cannot read {what} {path!r}: {exc.strerror}") from None


def _require(path: str | None, what: str, hint: str) -> str:
    if not path:
        raise CommandError(f"missing {what}; {hint}")
    if not os.path.exists(path):
        raise CommandError(f"missing {what} {path!r}; {hint}")
    return path


@contextmanager
def _atomic(path: str):
    """Write to a temp file beside ``path`` and rename once complete."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


class RunManifest:
    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.config = {k: v for k, v in vars(args).items() if k not in ("func", "parser")}
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.timings: dict[str, float] = {}
        self._t = time.perf_counter()

    def stage(self, name: str):
        now = time.perf_counter()
        self.timings[name] = round(now - self._t, 6)
        self._t = now

    def write(self, path: str):
        doc = {
            "command": self.command,
            "version": __version__,
            "seed": self.config.get("seed"),
            "config": self.config,
            "inputs": {k: {"path": v, "sha256": _sha256(v)} for k, v in self.inputs.items()},
            "outputs": {k: {"path": v, "sha256": _sha256(v)} for k, v in self.outputs.items()},
            "timings_seconds": self.timings,
        }
        with _atomic(path) as fh:
            json.dump(doc, fh, indent=2, default=str)
            fh.write("\n")


def _load_inputs(args, manifest: RunManifest | None = None):
    scale = (args.scale_min, args.scale_max)
    path = _require(args.ratings, "ratings file", "pass --ratings PATH (see `reprrec synth`)")
    ratings = parse_ratings(_read(path, "ratings file"), scale)
    tags, metadata = [], []
    if getattr(args, "tags", None):
        tags = parse_tags(_read(args.tags, "tags file"))
    if getattr(args, "metadata", None):
        metadata = parse_metadata(_read(args.metadata, "metadata file"))
    if manifest is not None:
        manifest.inputs["ratings"] = path
        if getattr(args, "tags", None):
            manifest.inputs["tags"] = args.tags
        if getattr(args, "metadata", None):
            manifest.inputs["metadata"] = args.metadata
    return ratings, tags, metadata


def _int_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("values must be positive integers")
    return values


def _add_scale(p):
    p.add_argument("--scale-min", type=float, default=0.5, help="lowest valid rating (default 0.5)")
    p.add_argument("--scale-max", type=float, default=5.0, help="highest valid rating (default 5.0)")


# -- subcommands -----------------------------------------------------------

def cmd_synth(args) -> int:
    manifest = RunManifest("synth", args)
    data = synth.generate(users=args.users, movies=args.movies, clusters=args.clusters,
                          seed=args.seed, ratings_per_user=args.ratings_per_user,
                          preference=args.preference, tag_rate=args.tag_rate)
    paths = synth.write(data, args.out)
    manifest.outputs.update(paths)
    manifest.stage("generate")
    manifest.write(os.path.join(args.out, "manifest.json"))
    print(f"wrote {len(data.ratings)} ratings, {len(data.tags)} tags, "
          f"{len(data.metadata)} metadata rows to {args.out}")
    return 0


def cmd_corpus(args) -> int:
    manifest = RunManifest("corpus", args)
    ratings, tags, metadata = _load_inputs(args, manifest)
    manifest.stage("parse")
    sentences = build_sentences(ratings, tags, metadata, args.max_actors)
    vocab = build_vocabulary(sentences, args.min_count)
    manifest.stage("build")
    with _atomic(args.out_sentences) as fh:
        write_sentences(sentences, fh)
    with _atomic(args.out_vocab) as fh:
        vocab.write(fh)
    manifest.outputs.update(sentences=args.out_sentences, vocabulary=args.out_vocab)
    manifest.stage("write")
    manifest.write(args.out_sentences + ".manifest.json")
    print(f"sentences={len(sentences)} vocabulary={len(vocab)} tokens={sum(len(s) for s in sentences)}")
    return 0


TRAIN_KEYS = {"model", "loss", "dim", "window", "epochs", "negatives", "lr", "lr_final",
              "noise_exponent", "seed", "workers", "min_count"}


def cmd_train(args) -> int:
    if args.config:
        try:
            kv = read_kv(_read(args.config, "config file"))
        except ConfigError as exc:
            raise CommandError(f"{args.config}: {exc}") from None
        for key, value in kv.items():
            attr = key.replace("-", "_")
            if attr not in TRAIN_KEYS:
                raise CommandError(f"{args.config}: unknown key {key!r}")
            # command-line flags win over the file
            if getattr(args, attr) is None:
                setattr(args, attr, value)
    model = args.model or "sg"
    loss = args.loss or "ns"
    if loss != "ns" and args.negatives is not None:
        args.parser.error("--negatives only applies to --loss ns")
    try:
        config = EmbeddingConfig(
            model=model, loss=loss, dim=int(args.dim or 100), window=int(args.window or 10),
            epochs=int(args.epochs if args.epochs is not None else 5),
            negatives=int(args.negatives or 5),
            lr_initial=float(args.lr) if args.lr is not None else None,
            lr_final=float(args.lr_final) if args.lr_final is not None else 1e-4,
            noise_exponent=float(args.noise_exponent) if args.noise_exponent is not None else 0.75,
            seed=stage_seed(int(args.seed if args.seed is not None else 1), "train"),
            workers=int(args.workers or 1),
        )
    except ValueError as exc:
        args.parser.error(str(exc))

    manifest = RunManifest("train", args)
    path = _require(args.sentences, "sentences file", "run `reprrec corpus` first")
    sentences = read_sentences(_read(path, "sentences file"))
    manifest.inputs["sentences"] = path
    if args.vocab:
        vocab = Vocabulary.read(_read(_require(args.vocab, "vocabulary file", "run `reprrec corpus` first"),
                                      "vocabulary file"))
        manifest.inputs["vocabulary"] = args.vocab
    else:
        vocab = build_vocabulary(sentences, int(args.min_count or 1))
    manifest.stage("load")
    model_ = train(sentences, vocab, config)
    manifest.stage("train")
    with _atomic(args.out) as fh:
        save_embeddings(model_, fh)
    manifest.outputs["embeddings"] = args.out
    manifest.config["derived_seed"] = config.seed
    manifest.stage("write")
    manifest.write(args.out + ".manifest.json")
    print(f"trained {config.model.value}/{config.loss.value} V={len(vocab)} R={config.dim} -> {args.out}")
    return 0


def _emit(rows, fmt: str, out=None):
    out = out or sys.stdout
    if fmt == "json":
        for tok, sim in rows:
            out.write(json.dumps({"token": str(tok), "namespace": tok.namespace.name.lower(),
                                  "similarity": round(sim, 4)}) + "\n")
        return
    width = max([len(str(t)) for t, _ in rows] + [5])
    out.write(f"{'rank':>4}  {'token':<{width}}  {'type':<8}  similarity\n")
    for n, (tok, sim) in enumerate(rows, 1):
        out.write(f"{n:>4}  {str(tok):<{width}}  {tok.namespace.name.lower():<8}  {sim:.4f}\n")


def _split_tokens(values) -> list[EntityToken]:
    out = []
    for v in values or []:
        for piece in v.split(","):
            if piece.strip():
                out.append(EntityToken.parse(piece.strip()))
    return out


def cmd_query(args) -> int:
    path = _require(args.embeddings, "embeddings file", "run `reprrec train` first")
    store = load_embeddings(_read(path, "embeddings file"))
    ns = Namespace.parse(args.type) if args.type else None
    try:
        if args.query == "similar":
            tok = EntityToken.parse(args.token)
            rows = store.nearest(store.unit_vector(tok), args.k, ns, exclude={tok})
        else:
            q = ArithmeticQuery(tuple(_split_tokens(args.plus)), tuple(_split_tokens(args.minus)),
                                ns, args.k, exclude_operands=not args.keep_operands)
            _, rows = combine(q, store)
    except UnknownTokenError as exc:
        raise CommandError(str(exc)) from None
    except DegenerateQueryError as exc:
        raise CommandError(f"degenerate query: {exc}") from None
    _emit(rows, args.format)
    return 0


def _read_pairs(path: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, row in enumerate(csv.reader(io.StringIO(_read(path, "pairs file"))), 1):
        if not row or (lineno == 1 and row[0].strip() == "userId"):
            continue
        if len(row) < 2:
            raise CommandError(f"{path}: line {lineno}: expected userId,movieId")
        pairs.append((row[0].strip(), row[1].strip()))
    return pairs


def _stores(args, names) -> dict:
    stores = {}
    for name in names:
        suffix = name[2:]
        if suffix == "CF":
            continue
        key = "cbow" if suffix == "CB" else "sg"
        if key in stores:
            continue
        path = getattr(args, key)
        _require(path, f"{key} embeddings for {name}", f"pass --{key} PATH (see `reprrec train --model {key}`)")
        stores[key] = load_embeddings(_read(path, "embeddings file"))
    return stores


def cmd_predict(args) -> int:
    manifest = RunManifest("predict", args)
    scale = (args.scale_min, args.scale_max)
    path = _require(args.ratings, "ratings file", "pass --ratings PATH")
    store = RatingsStore.from_records(parse_ratings(_read(path, "ratings file"), scale), scale)
    pairs = _read_pairs(_require(args.pairs, "pairs file", "pass --pairs PATH (CSV userId,movieId)"))
    manifest.inputs.update(ratings=path, pairs=args.pairs)
    if args.weights:
        weights = HybridWeights.read(_read(_require(args.weights, "weights file", "run `reprrec fit-hybrid`"),
                                           "weights file"))
        names = [n.upper() for n in weights.names]
        manifest.inputs["weights"] = args.weights
    else:
        names, weights = [args.model.upper()], None
    for n in names:
        if n not in MODEL_NAMES:
            raise CommandError(f"unknown model {n!r}; choose from {', '.join(MODEL_NAMES)}")
    stores = _stores(args, names)
    preds = {n: predict_batch(pairs, make_spec(n, args.k, stores), store) for n in names}
    manifest.stage("predict")
    with _atomic(args.out) as fh:
        fh.write("userId,movieId,prediction,fallback\n")
        for j, (u, i) in enumerate(pairs):
            if weights is None:
                p = preds[names[0]][j]
                value, fb = p.value, p.fallback
            else:
                value = blend([preds[n][j].value for n in names], weights, scale)
                fb = preds[names[int(np.argmax(weights.as_array()))]][j].fallback
            fh.write(f"{u},{i},{value:.6f},{fb.value}\n")
    manifest.outputs["predictions"] = args.out
    manifest.write(args.out + ".manifest.json")
    print(f"predicted {len(pairs)} pairs -> {args.out}")
    return 0


def cmd_fit_hybrid(args) -> int:
    manifest = RunManifest("fit-hybrid", args)
    path = _require(args.tuning, "tuning file", "pass --tuning PATH (CSV of component predictions plus rating)")
    rows = list(csv.reader(io.StringIO(_read(path, "tuning file"))))
    if not rows:
        raise CommandError(f"{path}: empty tuning file")
    header = [h.strip() for h in rows[0]]
    if args.truth_column not in header:
        raise CommandError(f"{path}: no {args.truth_column!r} column in header")
    t = header.index(args.truth_column)
    names = [h for j, h in enumerate(header) if j != t]
    try:
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as exc:
        raise CommandError(f"{path}: {exc}") from None
    if data.size == 0:
        raise CommandError(f"{path}: no tuning rows")
    P, y = np.delete(data, t, axis=1), data[:, t]
    w, err, iters = fit_weights(P, y)
    weights = HybridWeights(tuple(names), tuple(w))
    with _atomic(args.out) as fh:
        weights.write(fh)
    manifest.inputs["tuning"] = path
    manifest.outputs["weights"] = args.out
    manifest.write(args.out + ".manifest.json")
    print(f"tuning rmse={err:.6f} after {iters} iterations -> {args.out}")
    for n, a in zip(names, w):
        print(f"  {n} = {a:.6f}")
    return 0


def cmd_evaluate(args) -> int:
    manifest = RunManifest("evaluate", args)
    ratings, tags, metadata = _load_inputs(args, manifest)
    models = [m.strip().upper() for m in args.models.split(",") if m.strip()]
    for m in models:
        if m not in MODEL_NAMES:
            raise CommandError(f"unknown model {m!r}; choose from {', '.join(MODEL_NAMES)}")
    cfg = ProtocolConfig(
        models=tuple(models), ks=tuple(args.k), grid=grid_points(args.dims, args.epochs),
        window=args.window, negatives=args.negatives, min_count=args.min_count,
        max_actors=args.max_actors, scale=(args.scale_min, args.scale_max),
        neighbor_selection=args.neighbor_selection, seed=args.seed, workers=args.workers,
    )
    manifest.stage("load")
    report, _, _ = run_protocol(ratings, tags, metadata, cfg)
    manifest.stage("evaluate")
    print(report.table())
    if args.out:
        with _atomic(args.out) as fh:
            fh.write(report.to_json())
            fh.write("\n")
        manifest.outputs["report"] = args.out
        manifest.write(args.out + ".manifest.json")
    return 0


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reprrec", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, help="subcommand")

    p = sub.add_parser("synth", help="generate a planted-cluster fixture")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--users", type=int, default=200, help="number of users (default 200)")
    p.add_argument("--movies", type=int, default=80, help="number of movies (default 80)")
    p.add_argument("--clusters", type=int, default=4, help="number of planted genre clusters (default 4)")
    p.add_argument("--ratings-per-user", type=int, default=15, help="ratings drawn per user (default 15)")
    p.add_argument("--preference", type=float, default=0.5,
                   help="probability a rating comes from the user's preferred cluster (default 0.5)")
    p.add_argument("--tag-rate", type=float, default=0.3, help="probability a rating is also tagged (default 0.3)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("corpus", help="build artificial sentences and the vocabulary")
    p.add_argument("--ratings", required=True, help="ratings CSV userId,movieId,rating[,timestamp]")
    p.add_argument("--tags", help="tags CSV userId,movieId,tag[,timestamp]")
    p.add_argument("--metadata", help="metadata TSV movieId<TAB>director<TAB>actor1|actor2")
    p.add_argument("--max-actors", type=int, default=5, help="leading actors kept per movie (default 5)")
    p.add_argument("--min-count", type=int, default=1, help="drop tokens seen fewer times (default 1)")
    _add_scale(p)
    p.add_argument("--out-sentences", required=True, help="sentence file to write")
    p.add_argument("--out-vocab", required=True, help="vocabulary file to write (token<TAB>count)")
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("train", help="train CBOW or Skip-gram representations")
    p.add_argument("--sentences", required=True, help="sentence file from `corpus`")
    p.add_argument("--vocab", help="vocabulary file from `corpus` (default: rebuild from sentences)")
    p.add_argument("--config", help="key = value file; flags override its entries")
    p.add_argument("--model", choices=["cbow", "sg"], help="architecture (default sg)")
    p.add_argument("--loss", choices=["ns", "hs", "exact"], help="output layer (default ns)")
    p.add_argument("--dim", type=int, help="representation length R (default 100)")
    p.add_argument("--window", type=int, help="context window c (default 10)")
    p.add_argument("--epochs", type=int, help="passes over the corpus (default 5)")
    p.add_argument("--negatives", type=int, help="negative samples K, ns only (default 5)")
    p.add_argument("--lr", type=float, help="initial learning rate (default 0.05 cbow / 0.025 sg)")
    p.add_argument("--lr-final", type=float, help="final learning rate (default 1e-4)")
    p.add_argument("--noise-exponent", type=float, help="unigram noise exponent (default 0.75)")
    p.add_argument("--min-count", type=int, help="minimum count when rebuilding the vocabulary (default 1)")
    p.add_argument("--seed", type=int, help="random seed (default 1)")
    p.add_argument("--workers", type=int, help="training threads; only 1 is reproducible (default 1)")
    p.add_argument("--out", required=True, help="embeddings file to write")
    p.set_defaults(func=cmd_train, parser=p)

    p = sub.add_parser("query", help="similarity and analogy queries")
    qsub = p.add_subparsers(dest="query", required=True, help="query kind")
    for name, helptext in (("similar", "nearest tokens to one token"),
                           ("analogy", "nearest tokens to a sum/difference of tokens")):
        q = qsub.add_parser(name, help=helptext)
        q.add_argument("--embeddings", required=True, help="embeddings file from `train`")
        q.add_argument("--type", choices=[ns.name.lower() for ns in Namespace] + [ns.value for ns in Namespace],
                       help="only return tokens of this type")
        q.add_argument("--k", type=int, default=5, help="number of results (default 5)")
        q.add_argument("--format", choices=["table", "json"], default="table", help="output format")
        if name == "similar":
            q.add_argument("token", help="canonical token, e.g. m:122")
        else:
            q.add_argument("--plus", action="append", required=True, help="tokens to add (comma-separated)")
            q.add_argument("--minus", action="append", help="tokens to subtract (comma-separated)")
            q.add_argument("--keep-operands", action="store_true", help="allow operands in the results")
        q.set_defaults(func=cmd_query)

    p = sub.add_parser("predict", help="predict ratings for user,movie pairs")
    p.add_argument("--ratings", required=True, help="training ratings CSV")
    p.add_argument("--pairs", required=True, help="CSV of userId,movieId to score")
    p.add_argument("--model", default="IBCF", help=f"one of {', '.join(MODEL_NAMES)} (default IBCF)")
    p.add_argument("--weights", help="hybrid weights file; overrides --model")
    p.add_argument("--k", type=int, default=20, help="neighbourhood size (default 20)")
    p.add_argument("--cbow", help="CBOW embeddings file (UBCB/IBCB)")
    p.add_argument("--sg", help="Skip-gram embeddings file (UBSG/IBSG)")
    _add_scale(p)
    p.add_argument("--out", required=True, help="CSV to write userId,movieId,prediction,fallback")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("fit-hybrid", help="fit simplex-constrained hybrid weights")
    p.add_argument("--tuning", required=True, help="CSV with one column per component plus the truth column")
    p.add_argument("--truth-column", default="rating", help="name of the truth column (default rating)")
    p.add_argument("--out", required=True, help="weights file to write")
    p.set_defaults(func=cmd_fit_hybrid)

    p = sub.add_parser("evaluate", help="run the tuning + 4-fold cross-validation protocol")
    p.add_argument("--ratings", required=True, help="ratings CSV")
    p.add_argument("--tags", help="tags CSV")
    p.add_argument("--metadata", help="metadata TSV")
    p.add_argument("--models", default=",".join(MODEL_NAMES), help="comma-separated models (default all six)")
    p.add_argument("--k", type=_int_list, default=list(DEFAULT_KS), help="neighbourhood sizes (default 5,10,20,50,100)")
    p.add_argument("--dims", type=_int_list, default=[100], help="representation lengths to tune over (default 100)")
    p.add_argument("--epochs", type=_int_list, default=[5], help="epoch counts to tune over (default 5)")
    p.add_argument("--window", type=int, default=10, help="context window (default 10)")
    p.add_argument("--negatives", type=int, default=5, help="negative samples (default 5)")
    p.add_argument("--min-count", type=int, default=1, help="vocabulary threshold (default 1)")
    p.add_argument("--max-actors", type=int, default=5, help="leading actors per movie (default 5)")
    p.add_argument("--neighbor-selection", choices=["filter_first", "topk_first"], default="filter_first",
                   help="restrict to raters before (default) or after picking the top k")
    _add_scale(p)
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--workers", type=int, default=1, help="training threads (default 1)")
    p.add_argument("--out", help="JSON report to write")
    p.set_defaults(func=cmd_evaluate)
    return parser


def _setup_logging():
    level = os.environ.get("REPRREC_LOG", "error").lower()
    logging.basicConfig(level={"debug": logging.DEBUG, "info": logging.INFO}.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CommandError, CorpusError, ConfigError, UnknownTokenError, DegenerateQueryError) as exc:
        print(f"reprrec {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"reprrec {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
