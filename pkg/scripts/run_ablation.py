"""Train every mode (baseline, DS, DS+GA, AU, AU+GA) and print a dev/test F1 table.

Uses the seeded synthetic corpus unless --config points at a run configuration.

    python3 scripts/run_ablation.py --epochs 10
    python3 scripts/run_ablation.py --config runs/wnut16.toml --epochs 50
"""

import argparse
import json
import time

from saner import config as run_config
from saner import synthetic
from saner.cli import _configured, _embedder, _neighbors
from saner.corpus import BIOES, TagScheme, to_scheme, vocabulary
from saner.embeddings import CompositeEmbedder, build_neighbor_index
from saner.evaluate import conlleval_score, unseen_recall
from saner.model import MODES, ModelConfig, embed_all, predict
from saner.train import train


def load_inputs(args):
    if args.config is None:
        corpus = synthetic.generate(args.seed)
        index = build_neighbor_index(corpus.source_table, vocabulary(corpus.train + corpus.dev + corpus.test), 10)
        emb = CompositeEmbedder([corpus.input_table])
        base = run_config.from_dict({"train": {"lr": 1e-2, "batch_size": 4}}, ".", {"seed": args.seed})
        return base.model, corpus.train, corpus.dev, corpus.test, emb, emb, emb, index
    cfg = run_config.load(args.config, {"seed": args.seed})
    data = _configured(cfg)
    index = _neighbors(cfg, [s for split in data.values() for s in split])
    return (cfg.model, data["train"], data["dev"], data.get("test"), _embedder(cfg, "train"),
            _embedder(cfg, "dev"), _embedder(cfg, "test") if "test" in data else None, index)


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config")
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--json", action="store_true", help="print JSON rows instead of a table")
    args = parser.parse_args()

    base, train_data, dev_data, test_data, train_emb, dev_emb, test_emb, index = load_inputs(args)
    rows = []
    for mode in MODES:
        cfg = ModelConfig.from_dict({**base.to_dict(), "mode": mode, "epochs": args.epochs})
        t0 = time.perf_counter()
        result = train(cfg, train_data, dev_data, train_emb, index, dev_embedder=dev_emb)
        row = {"mode": mode, "best_epoch": result.best_epoch, "dev_f1": result.best_f1,
               "seconds": round(time.perf_counter() - t0, 1)}
        if test_data:
            test = to_scheme(test_data, TagScheme(BIOES))
            preds = predict(result.best_tagger(), test, embed_all(test_emb, test), index)
            row["test_f1"] = conlleval_score(test, preds).f1
            row["unseen"], row["unseen_recall"] = unseen_recall(train_data, test, preds)
        rows.append(row)
        if args.json:
            print(json.dumps(row))

    if not args.json:
        print(f"{'mode':<9}{'epoch':>6}{'dev F1':>9}{'test F1':>9}{'unseen R':>10}{'sec':>7}")
        for r in rows:
            unseen = "-" if r.get("unseen_recall") is None else f"{r['unseen_recall']:.3f}"
            print(f"{r['mode']:<9}{r['best_epoch']:>6}{r['dev_f1']:>9.3f}{r.get('test_f1', float('nan')):>9.3f}"
                  f"{unseen:>10}{r['seconds']:>7}")


if __name__ == "__main__":
    main()
