"""Command-line entry point: ``saner <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from functools import lru_cache
from pathlib import Path
from typing import Sequence

from . import config as run_config
from .autodiff import load_checkpoint, save_checkpoint
from .corpus import BIOES, TagScheme, corpus_stats, read_conll, to_scheme, vocabulary, write_conll
from .embeddings import (CompositeEmbedder, build_neighbor_index, load_embedding_text, load_neighbor_index,
                         load_precomputed, save_neighbor_index)
from .errors import ConfigError, DivergenceError, SanerError
from .evaluate import conlleval_score, inspection_dump, unseen_recall, write_inspection
from .model import Tagger, embed_all, predict
from .train import format_log, train

log = logging.getLogger("saner")

EXIT_ERROR, EXIT_MISSING, EXIT_CONFIG, EXIT_DIVERGED = 1, 2, 3, 4


# ---------------------------------------------------------------- helpers


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _read(cfg: run_config.RunConfig, path: str, mode: str = "strict"):
    if path is None:
        raise ConfigError("a data file is required but none was configured")
    return read_conll(path, cfg.data.column, TagScheme(cfg.data.scheme), mode)


@lru_cache(maxsize=8)
def _cached_table(path: str, unk_policy: str, stamp: tuple[int, int]):
    return load_embedding_text(path, unk_policy)


def _static_table(path: str, unk_policy: str):
    st = Path(path).stat()
    return _cached_table(path, unk_policy, (st.st_mtime_ns, st.st_size))


def _embedder(cfg: run_config.RunConfig, split: str, precomputed: Sequence[str] | None = None) -> CompositeEmbedder:
    slots = [_static_table(p, cfg.embeddings.unk_policy) for p in cfg.embeddings.static]
    extra = precomputed if precomputed is not None else cfg.embeddings.precomputed.get(split, [])
    slots.extend(load_precomputed(p) for p in extra)
    if not slots:
        raise ConfigError("no input embeddings configured ([embeddings] static / precomputed)")
    return CompositeEmbedder(slots)


def _neighbors(cfg: run_config.RunConfig, sentences):
    emb = cfg.embeddings
    if emb.neighbor_cache and Path(emb.neighbor_cache).exists():
        cached = load_neighbor_index(emb.neighbor_cache)
        if cached.m >= cfg.model.m:
            return cached
        if emb.neighbor_source is None:
            raise ConfigError(f"neighbor cache holds m={cached.m} but m={cfg.model.m} was requested")
        log.info("neighbor cache has m=%d < %d; rebuilding", cached.m, cfg.model.m)
    if emb.neighbor_source is None:
        if cfg.model.augmented:
            raise ConfigError(f"mode {cfg.model.mode} needs embeddings.neighbor_source or neighbor_cache")
        return None
    source = load_embedding_text(emb.neighbor_source)
    index = build_neighbor_index(source, vocabulary(sentences), cfg.model.m)
    if emb.neighbor_cache:
        save_neighbor_index(emb.neighbor_cache, index)
    return index


def _configured(cfg: run_config.RunConfig, mode: str = "strict"):
    return {split: _read(cfg, getattr(cfg.data, split), mode)
            for split in run_config.SPLITS if getattr(cfg.data, split)}


def _load_tagger(args, cfg) -> Tagger:
    ckpt = Path(args.ckpt) if args.ckpt else Path(args.out) / "best.ckpt"
    store, meta = load_checkpoint(ckpt)
    return Tagger.from_checkpoint(store, meta)


def _eval_inputs(args, cfg, tagger: Tagger):
    """Sentences, their input vectors and the neighbor index for evaluate/predict/inspect."""
    path = args.data or cfg.data.test
    split = args.split or ("test" if args.data is None else None)
    sentences = to_scheme(_read(cfg, path, "repair"), TagScheme(BIOES))
    embedder = _embedder(cfg, split, args.precomputed)
    if embedder.total_dim != tagger.input_dim:
        raise ConfigError(f"input width {embedder.total_dim} differs from the checkpoint's {tagger.input_dim}")
    known = list(_configured(cfg, "repair").values())
    index = _neighbors(cfg, [s for data in known for s in data] + sentences) if tagger.config.augmented else None
    return sentences, embed_all(embedder, sentences), index


def _overrides(args) -> dict:
    keys = ("mode", "seed", "m", "epochs", "batch_size", "lr", "dropout", "constrain_decode")
    return {k: getattr(args, k, None) for k in keys}


# ---------------------------------------------------------------- commands


def cmd_stats(args) -> int:
    scheme = TagScheme(args.scheme)
    train_data = read_conll(args.train, args.column, scheme)
    if args.eval:
        stats = corpus_stats(read_conll(args.eval, args.column, scheme), train_data)
    else:
        stats = corpus_stats(train_data)
    text = stats.to_json()
    print(text)
    if args.out:
        (_out_dir(args) / "stats.json").write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_build_neighbors(args) -> int:
    sentences = [s for path in args.vocab_from
                 for s in read_conll(path, args.column, TagScheme(args.scheme), "repair")]
    index = build_neighbor_index(load_embedding_text(args.emb), vocabulary(sentences), args.m)
    out = _out_dir(args)
    save_neighbor_index(out / "neighbors.bin", index)
    report = {"queries": len(index.entries), "missing": len(index.missing), "m": index.m}
    _write_json(out / "neighbors.coverage.json", report)
    print(json.dumps(report))
    return 0


def cmd_train(args) -> int:
    cfg = run_config.load(args.config, _overrides(args))
    out = _out_dir(args)
    (out / "config.resolved").write_text(cfg.to_toml(), encoding="utf-8")
    data = _configured(cfg)
    if "train" not in data or "dev" not in data:
        raise ConfigError("[data] needs both train and dev files for training")
    index = _neighbors(cfg, [s for split in data.values() for s in split])
    log_path = out / "train.log.jsonl"
    log_path.write_text("", encoding="utf-8")

    def on_epoch(entry):
        with log_path.open("a", encoding="utf-8") as fh:
            fh.write(format_log([entry]))

    result = train(cfg.model, data["train"], data["dev"], _embedder(cfg, "train"), index,
                   dev_embedder=_embedder(cfg, "dev"), on_epoch=on_epoch)
    tagger = result.best_tagger()
    save_checkpoint(out / "best.ckpt", tagger.params, tagger.metadata())
    summary = {"best_epoch": result.best_epoch, "best_dev_f1": max(result.best_f1, 0.0)}
    if "test" in data:
        test = to_scheme(data["test"], TagScheme(BIOES))
        preds = predict(tagger, test, embed_all(_embedder(cfg, "test"), test), index)
        summary["test"] = _report(data["train"], test, preds)
        _write_json(out / "eval.json", summary["test"])
        write_conll(out / "preds.conll", test, preds)
    print(json.dumps(summary))
    return 0


def _report(train_data, sentences, preds) -> dict:
    report = conlleval_score(sentences, preds)
    if train_data is not None:
        report.unseen_count, report.unseen_recall = unseen_recall(train_data, sentences, preds)
    return report.to_dict()


def cmd_evaluate(args) -> int:
    cfg = run_config.load(args.config, _overrides(args))
    tagger = _load_tagger(args, cfg)
    sentences, inputs, index = _eval_inputs(args, cfg, tagger)
    preds = predict(tagger, sentences, inputs, index)
    train_data = _read(cfg, cfg.data.train, "repair") if cfg.data.train else None
    report = _report(train_data, sentences, preds)
    _write_json(_out_dir(args) / "eval.json", report)
    print(json.dumps({k: report[k] for k in ("precision", "recall", "f1")}))
    return 0


def cmd_predict(args) -> int:
    cfg = run_config.load(args.config, _overrides(args))
    tagger = _load_tagger(args, cfg)
    sentences, inputs, index = _eval_inputs(args, cfg, tagger)
    write_conll(_out_dir(args) / "preds.conll", sentences, predict(tagger, sentences, inputs, index))
    return 0


def cmd_inspect(args) -> int:
    cfg = run_config.load(args.config, _overrides(args))
    tagger = _load_tagger(args, cfg)
    sentences, inputs, index = _eval_inputs(args, cfg, tagger)
    write_inspection(_out_dir(args) / "inspect.json", inspection_dump(tagger, sentences, inputs, index))
    return 0


def cmd_gen_synthetic(args) -> int:
    from .synthetic import generate

    corpus = generate(args.seed, args.n_train, args.n_dev, args.n_test)
    out = _out_dir(args)
    corpus.write(out)
    doc = {
        "data": {"train": "train.conll", "dev": "dev.conll", "test": "test.conll", "scheme": "BIOES"},
        "embeddings": {"static": ["emb.txt"], "neighbor_source": "source.txt",
                       "neighbor_cache": "neighbors.bin"},
        "model": {"mode": "AU+GA", "seed": args.seed},
        "train": {"lr": 1e-2, "batch_size": 4, "epochs": 50},
    }
    (out / "config.toml").write_text(
        "# toy corpus: lr and batch size raised so the CRF transitions can move within 50 epochs\n"
        + run_config.tomli_w.dumps(doc), encoding="utf-8")
    print(json.dumps({"train": len(corpus.train), "dev": len(corpus.dev), "test": len(corpus.test)}))
    return 0


# ---------------------------------------------------------------- parser


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_run_options(p: argparse.ArgumentParser, model_path: bool = False) -> None:
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--out", default="runs/default", help="output directory")
    p.add_argument("--mode", choices=["baseline", "DS", "DS+GA", "AU", "AU+GA"])
    p.add_argument("--seed", type=int)
    p.add_argument("--m", type=int, help="similar words per token")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--constrain-decode", type=_bool, nargs="?", const=True, dest="constrain_decode",
                   help="forbid invalid BIOES transitions at decode time (default on)")
    if model_path:
        p.add_argument("--ckpt", help="checkpoint (default: <out>/best.ckpt)")
        p.add_argument("--data", help="CoNLL file to process (default: [data] test)")
        p.add_argument("--split", choices=["train", "dev", "test"],
                       help="which [embeddings.precomputed] files pair with --data")
        p.add_argument("--precomputed", nargs="*", help="precomputed vector files for --data")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="saner", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="sentence/entity counts and %% unseen entities")
    p.add_argument("--train", required=True)
    p.add_argument("--eval")
    p.add_argument("--column", type=int, default=1)
    p.add_argument("--scheme", choices=["BIO", "BIOES"], default="BIO")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("build-neighbors", help="top-m similar-word cache")
    p.add_argument("--emb", required=True)
    p.add_argument("--vocab-from", nargs="+", required=True, dest="vocab_from")
    p.add_argument("--m", type=int, default=10)
    p.add_argument("--column", type=int, default=1)
    p.add_argument("--scheme", choices=["BIO", "BIOES"], default="BIO")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_build_neighbors)

    for name, func, helptext in (("train", cmd_train, "train and keep the best dev checkpoint"),
                                 ("evaluate", cmd_evaluate, "score a checkpoint"),
                                 ("predict", cmd_predict, "tag a CoNLL file"),
                                 ("inspect", cmd_inspect, "dump neighbor weights and gate values")):
        p = sub.add_parser(name, help=helptext)
        _add_run_options(p, model_path=name != "train")
        p.set_defaults(func=func)

    p = sub.add_parser("gen-synthetic", help="write the seeded toy corpus and a matching config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--n-train", type=int, default=50, dest="n_train")
    p.add_argument("--n-dev", type=int, default=25, dest="n_dev")
    p.add_argument("--n-test", type=int, default=25, dest="n_test")
    p.set_defaults(func=cmd_gen_synthetic)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"saner: error: file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"saner: error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"saner: error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except SanerError as exc:
        print(f"saner: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
