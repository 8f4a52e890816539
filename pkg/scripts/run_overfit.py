"""Overfit check: AU+GA on the seeded synthetic corpus, printing dev F1 per epoch."""

import argparse
import time

from saner import synthetic
from saner.corpus import vocabulary
from saner.embeddings import CompositeEmbedder, build_neighbor_index
from saner.model import ModelConfig
from saner.train import train


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--mode", default="AU+GA")
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--lr", type=float, default=1e-2)
    parser.add_argument("--batch-size", type=int, default=4)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--target", type=float, default=0.95)
    args = parser.parse_args()

    corpus = synthetic.generate(args.seed)
    index = build_neighbor_index(corpus.source_table, vocabulary(corpus.train + corpus.dev + corpus.test), 10)
    cfg = ModelConfig(mode=args.mode, lr=args.lr, batch_size=args.batch_size, epochs=args.epochs, seed=args.seed)

    t0 = time.perf_counter()

    def show(entry):
        print(f"epoch {entry['epoch']:3d}  loss {entry['loss']:8.4f}  dev F1 {entry['dev_f1']:.3f}  "
              f"({time.perf_counter() - t0:.1f}s)")

    result = train(cfg, corpus.train, corpus.dev, CompositeEmbedder([corpus.input_table]), index, on_epoch=show)
    reached = result.best_f1 >= args.target
    print(f"best dev F1 {result.best_f1:.3f} at epoch {result.best_epoch}: "
          f"{'reached' if reached else 'missed'} target {args.target}")
    raise SystemExit(0 if reached else 1)


if __name__ == "__main__":
    main()
