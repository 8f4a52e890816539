"""Seeded toy corpus whose entity words form tight clusters in embedding space.

Each entity type owns a cluster of words; the neighbor-source embeddings put
cluster members close together, so retrieved similar words reveal the type
even for entity words never seen with that label in training.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import BIOES, LabeledSentence, TagScheme, spans_to_tags, write_conll, EntitySpan
from .embeddings import EmbeddingTable, save_embedding_text

TYPES = ("PER", "LOC", "ORG")
_ONSETS = "b c d f g h j k l m n p r s t v z".split()
_VOWELS = "a e i o u".split()


@dataclass
class SyntheticCorpus:
    train: list[LabeledSentence]
    dev: list[LabeledSentence]
    test: list[LabeledSentence]
    input_table: EmbeddingTable
    source_table: EmbeddingTable
    clusters: dict[str, list[str]]

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {name: out / f"{name}.conll" for name in ("train", "dev", "test")}
        for name, path in paths.items():
            write_conll(path, getattr(self, name))
        paths["emb"] = out / "emb.txt"
        paths["source"] = out / "source.txt"
        save_embedding_text(paths["emb"], self.input_table)
        save_embedding_text(paths["source"], self.source_table)
        return paths


def _words(rng: np.random.Generator, count: int, taken: set[str]) -> list[str]:
    out = []
    while len(out) < count:
        syll = rng.integers(2, 4)
        w = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(syll))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def generate(seed: int = 42, n_train: int = 50, n_dev: int = 25, n_test: int = 25, vocab_size: int = 60,
             dim: int = 16, min_len: int = 5, max_len: int = 12, input_noise: float = 1.0,
             source_noise: float = 0.3) -> SyntheticCorpus:
    """Half of the vocabulary is split evenly across the entity types, the rest is context words."""
    rng = np.random.default_rng(seed)
    per_type = vocab_size // (2 * len(TYPES))
    taken: set[str] = set()
    clusters = {t: [w.capitalize() for w in _words(rng, per_type, taken)] for t in TYPES}
    clusters["O"] = _words(rng, vocab_size - per_type * len(TYPES), taken)

    centroids = {c: v for c, v in zip(clusters, np.linalg.qr(rng.normal(size=(dim, dim)))[0].T * 3.0)}

    def table(noise: float) -> EmbeddingTable:
        vectors = {}
        for c, words in clusters.items():
            for w in words:
                vectors[w.lower()] = centroids[c] + rng.normal(scale=noise, size=dim)
        return EmbeddingTable.from_dict(vectors)

    input_table = table(input_noise)
    source_table = table(source_noise)

    def sentence() -> LabeledSentence:
        n = int(rng.integers(min_len, max_len + 1))
        words = [str(w) for w in rng.choice(clusters["O"], size=n)]
        spans = []
        pos = int(rng.integers(0, 2))
        while pos < n and len(spans) < 3:
            length = int(rng.integers(1, 3))
            if pos + length > n:
                break
            etype = TYPES[int(rng.integers(len(TYPES)))]
            for i in range(pos, pos + length):
                words[i] = str(rng.choice(clusters[etype]))
            spans.append(EntitySpan(etype, pos, pos + length - 1))
            pos += length + int(rng.integers(1, 4))
        return LabeledSentence.from_words(words, spans_to_tags(spans, n, TagScheme(BIOES)))

    sents = [sentence() for _ in range(n_train + n_dev + n_test)]
    return SyntheticCorpus(sents[:n_train], sents[n_train:n_train + n_dev], sents[n_train + n_dev:],
                           input_table, source_table, clusters)
