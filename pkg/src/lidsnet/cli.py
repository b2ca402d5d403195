"""Command-line interface: train, eval, predict, bench, sweep, gradcheck.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, evalbench, gradcheck, model_store
from .config import Config, ConfigError, parse_overrides, read_config_file
from .embeddings import EmbeddingFileError, parse_vector_file
from .text import DatasetError, UNSEEN, load_dataset
from .trainer import TrainingDiverged, TrainingLog, predict_proba, train

log = logging.getLogger("lidsnet")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--out-dir", default="lidsnet_out", help="directory for reports and the run manifest")
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (results reproducible only at 1)")
    p.add_argument("--log-level", default="INFO")


def _add_data(p):
    p.add_argument("--data", default=os.environ.get("LIDSNET_DATA"),
                   help="dataset root with train/valid/test (default: $LIDSNET_DATA)")


def _add_training(p):
    p.add_argument("--config", help="key = value config file, or a run manifest JSON")
    p.add_argument("--phases", type=int, choices=(1, 2))
    p.add_argument("--embeddings", choices=("random", "glove", "fasttext", "char-only"))
    p.add_argument("--glove-path")
    p.add_argument("--fasttext-path")
    p.add_argument("--seed", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--lstm-units", type=int)
    p.add_argument("--pairs-per-class", type=int)
    p.add_argument("--phase1-epochs", type=int)
    p.add_argument("--phase2-epochs", type=int)
    p.add_argument("--precision", choices=("f32", "f64"))
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field, e.g. --set phase2_patience=5")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lidsnet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model (phase I unless --phases 1, then phase II)")
    _add_data(p)
    _add_training(p)
    _add_common(p)

    p = sub.add_parser("eval", help="accuracy and confusion matrix on a split")
    p.add_argument("--model", required=True)
    _add_data(p)
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    _add_common(p)

    p = sub.add_parser("predict", help="predict intents for --text values or stdin lines")
    p.add_argument("--model", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--text", action="append")
    src.add_argument("--stdin", action="store_true")
    p.add_argument("--top-k", type=int, default=1)
    _add_common(p)

    p = sub.add_parser("bench", help="latency and footprint report")
    p.add_argument("--model", required=True)
    _add_data(p)
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--runs", type=int, default=200)
    p.add_argument("--warmup", type=int, default=20)
    _add_common(p)

    p = sub.add_parser("sweep", help="validation accuracy over a margin / LSTM-units grid")
    _add_data(p)
    _add_training(p)
    p.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2,...",
                   help="margin=... or lstm-units=...; repeat for a cartesian product")
    _add_common(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", choices=sorted(gradcheck.CHECKS),
                   help="double one layer's analytic gradient to show the checker fails")
    _add_common(p)
    return parser


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def resolve_config(args) -> Config:
    """Defaults < --config file < --set < explicit flags."""
    values = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        if path.suffix == ".json":
            values.update(json.loads(path.read_text())["config"])
            values = Config.from_dict(values).to_dict()
            values["conv_kernels"] = tuple(values["conv_kernels"])
        else:
            values.update(read_config_file(path))
    pairs = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    values.update(parse_overrides(pairs))
    flags = {
        "phases": args.phases, "embeddings": args.embeddings, "seed": args.seed,
        "margin": args.margin, "lstm_units": args.lstm_units, "pairs_per_class": args.pairs_per_class,
        "phase1_epochs": args.phase1_epochs, "phase2_epochs": args.phase2_epochs,
        "precision": args.precision,
    }
    values.update({k: v for k, v in flags.items() if v is not None})
    if args.glove_path and args.fasttext_path:
        raise UsageError("give only one of --glove-path and --fasttext-path")
    if args.glove_path:
        values["embedding_path"] = args.glove_path
        values.setdefault("embeddings", "glove")
    if args.fasttext_path:
        values["embedding_path"] = args.fasttext_path
        values.setdefault("embeddings", "fasttext")
    mode = values.get("embeddings", Config.embeddings)
    if mode in ("glove", "fasttext") and not values.get("embedding_path"):
        raise UsageError(f"--embeddings {mode} needs --{mode}-path")
    return Config(**values)


def require_data(args) -> Path:
    if not args.data:
        raise UsageError("no dataset given: pass --data or set LIDSNET_DATA")
    root = Path(args.data)
    if not root.is_dir():
        raise UsageError(f"dataset directory not found: {root}")
    return root


def write_manifest(args, out_dir: Path, config: Config | None = None, extra=None):
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:],
        "arguments": {k: v for k, v in vars(args).items() if k != "command"},
        "config": config.to_dict() if config is not None else None,
        "lidsnet_version": __version__,
        "numpy_version": np.__version__,
        "python": platform.python_version(),
    }
    if extra:
        manifest.update(extra)
    path = out_dir / f"manifest_{args.command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def thread_limit(n):
    if n < 1:
        raise UsageError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def load_vectors(cfg, corpus):
    if cfg.embeddings not in ("glove", "fasttext"):
        return None
    return parse_vector_file(cfg.embedding_path, cfg.word_dim, vocab=corpus.word_vocab)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = resolve_config(args)
    root = require_data(args)
    out = Path(args.out_dir)
    write_manifest(args, out, cfg)
    corpus = load_dataset(root, cfg.t_max, cfg.l_max)
    log.info("loaded %s: %d/%d/%d samples, %d intents, %d words, %d chars", root,
             len(corpus["train"]), len(corpus["valid"]), len(corpus["test"]),
             len(corpus.label_names), len(corpus.word_vocab), len(corpus.char_vocab))
    training_log = TrainingLog()
    model = train(corpus, cfg, training_log, vectors=load_vectors(cfg, corpus))
    n = model_store.save(model, out / "model.lids")
    training_log.write_csv(out / "training_log.csv")
    report = evalbench.evaluate(model, corpus["valid"])
    print(f"model={out / 'model.lids'}")
    print(f"mode={cfg.mode_name}")
    print(f"bytes={n}")
    print(f"valid_accuracy={report.accuracy:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    root = require_data(args)
    model = model_store.load(args.model)
    cfg = model.config
    corpus = load_dataset(root, cfg.t_max, cfg.l_max, vocabs=(model.word_vocab, model.char_vocab),
                          label_names=model.label_names, splits=(args.split,))
    data = corpus[args.split]
    if len(data) and np.all(data.labels == UNSEEN):
        raise DatasetError(f"none of the intents in {root}/{args.split} are known to the model")
    report = evalbench.evaluate(model, data)
    out = Path(args.out_dir)
    write_manifest(args, out, cfg, {"accuracy": report.accuracy})
    report.write_confusion_csv(out / f"confusion_{args.split}.csv")
    (out / f"eval_{args.split}.csv").write_text(
        f"split,accuracy,n_samples\n{args.split},{report.accuracy!r},{report.n_samples}\n"
    )
    log.info("\n%s", report.summary())
    print(f"accuracy={report.accuracy:.6f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    if args.top_k < 1:
        raise UsageError("--top-k must be >= 1")
    model = model_store.load(args.model)
    write_manifest(args, Path(args.out_dir), model.config)
    lines = args.text if args.text else (ln.rstrip("\n") for ln in sys.stdin)
    k = min(args.top_k, model.n_classes)
    for line in lines:
        if not line.strip():
            print("ERROR empty input", flush=True)
            continue
        probs = predict_proba(model, [line])[0]
        order = np.argsort(-probs, kind="stable")[:k]
        print("\t".join(f"{model.label_names[i]}\t{probs[i]:.6f}" for i in order), flush=True)
    return EXIT_OK


def cmd_bench(args) -> int:
    root = require_data(args)
    model = model_store.load(args.model)
    utterances = [" ".join(t) for t in
                  load_dataset(root, vocabs=(model.word_vocab, model.char_vocab),
                               label_names=model.label_names, splits=(args.split,))[args.split].tokens]
    latency = evalbench.benchmark_latency(model, utterances, args.runs, args.warmup)
    fp = evalbench.count_params(model)
    out = Path(args.out_dir)
    results = {
        "median_ms": latency.median, "p95_ms": latency.p95, "max_ms": latency.max,
        "mean_ms": latency.mean, "params": fp.total, "size_bytes": fp.serialized_bytes,
        "gzip_bytes": fp.gzip_bytes, **{f"params_{k}": v for k, v in fp.components.items()},
    }
    write_manifest(args, out, model.config, {"results": results})
    with open(out / "bench.csv", "w") as fh:
        fh.write("metric,value\n")
        for key, value in results.items():
            fh.write(f"{key},{value!r}\n")
    for key in ("median_ms", "p95_ms", "max_ms"):
        print(f"{key}={results[key]:.3f}")
    print(f"params={fp.total}")
    print(f"size_bytes={fp.serialized_bytes}")
    print(f"gzip_bytes={fp.gzip_bytes}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        grid = evalbench.parse_grid(args.grid)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg = resolve_config(args)
    root = require_data(args)
    out = Path(args.out_dir)
    write_manifest(args, out, cfg, {"grid": grid})
    corpus = load_dataset(root, cfg.t_max, cfg.l_max)
    rows = evalbench.sweep(corpus, cfg, grid, vectors=load_vectors(cfg, corpus),
                           on_result=lambda r: print(f"{r['setting']}\tvalid_accuracy={r['valid_accuracy']:.6f}",
                                                     flush=True))
    evalbench.write_sweep_csv(rows, out / "sweep.csv")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_checks(args.instances, args.seed, fault=args.inject_fault)
    write_manifest(args, Path(args.out_dir), None,
                   {"results": {r.layer: r.max_error for r in results}})
    print(gradcheck.format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


COMMANDS = {
    "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
    "bench": cmd_bench, "sweep": cmd_sweep, "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        with thread_limit(args.threads):
            return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"lidsnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, EmbeddingFileError, model_store.ModelFormatError, TrainingDiverged,
            OSError, ValueError) as exc:
        print(f"lidsnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
