"""Static embedding tables, per-token input composition and the similar-word index."""

from __future__ import annotations

import logging
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autodiff import _Reader
from .corpus import LabeledSentence
from .errors import CoverageError, FormatError, ShapeError, UndefinedSimilarityError

log = logging.getLogger(__name__)

ZERO = "zero"
MEAN = "mean"


@dataclass
class EmbeddingTable:
    dim: int
    vocab: dict[str, int]
    matrix: np.ndarray
    unk_policy: str = ZERO
    duplicates: int = 0
    _unk: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape != (len(self.vocab), self.dim):
            raise ShapeError(f"matrix shape {self.matrix.shape} does not match vocab/dim")
        if self.unk_policy not in (ZERO, MEAN):
            raise ValueError(f"unknown unk_policy {self.unk_policy!r}")

    @classmethod
    def from_dict(cls, vectors: dict[str, Sequence[float]], unk_policy: str = ZERO) -> "EmbeddingTable":
        words = list(vectors)
        matrix = np.array([vectors[w] for w in words], dtype=np.float64).reshape(len(words), -1)
        return cls(matrix.shape[1], {w: i for i, w in enumerate(words)}, matrix, unk_policy)

    @property
    def words(self) -> list[str]:
        return list(self.vocab)

    def __contains__(self, word: str) -> bool:
        return word in self.vocab

    def __len__(self):
        return len(self.vocab)

    def unknown_vector(self) -> np.ndarray:
        if self._unk is None:
            if self.unk_policy == MEAN and len(self.vocab):
                self._unk = self.matrix.mean(axis=0)
            else:
                self._unk = np.zeros(self.dim)
        return self._unk

    def lookup(self, token) -> np.ndarray:
        """Vector for a token: exact surface first, then its lowercased form."""
        for key in (token.surface, token.normalized):
            row = self.vocab.get(key)
            if row is not None:
                return self.matrix[row]
        return self.unknown_vector()


def load_embedding_text(path, unk_policy: str = ZERO) -> EmbeddingTable:
    """Read ``word v1 ... vd`` lines, with an optional ``count dim`` header."""
    vocab: dict[str, int] = {}
    rows: list[list[float]] = []
    dim = None
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").rstrip().split(" ")
            if parts == [""]:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise FormatError(f"line {lineno}: no vector values")
            if len(values) != dim:
                raise FormatError(f"line {lineno}: expected {dim} values, found {len(values)}")
            try:
                vec = [float(v) for v in values]
            except ValueError:
                raise FormatError(f"line {lineno}: non-numeric vector value") from None
            if not all(math.isfinite(v) for v in vec):
                raise FormatError(f"line {lineno}: non-finite vector value")
            if word in vocab:
                duplicates += 1
                continue
            vocab[word] = len(rows)
            rows.append(vec)
    if dim is None:
        raise FormatError(f"{path}: no embedding rows")
    if duplicates:
        log.warning("%s: %d duplicate words ignored (first occurrence kept)", path, duplicates)
    matrix = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return EmbeddingTable(dim, vocab, matrix, unk_policy, duplicates)


def save_embedding_text(path, table: EmbeddingTable, header: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.write(f"{len(table)} {table.dim}\n")
        for word, row in table.vocab.items():
            fh.write(word + " " + " ".join(repr(float(v)) for v in table.matrix[row]) + "\n")


# ---------------------------------------------------------------- precomputed vectors


@dataclass
class PrecomputedVectorFile:
    """Per-token vectors (e.g. from a contextual encoder) keyed by sentence/token index."""

    dim: int
    sentences: list[np.ndarray]

    def vectors(self, sentence_index: int, length: int) -> np.ndarray:
        if sentence_index is None or sentence_index >= len(self.sentences):
            raise CoverageError(f"no precomputed vectors for sentence {sentence_index}")
        block = self.sentences[sentence_index]
        if block.shape[0] != length:
            raise CoverageError(f"sentence {sentence_index}: vectors for {block.shape[0]} of {length} tokens")
        return block[:length]


def load_precomputed(path) -> PrecomputedVectorFile:
    """CoNLL-shaped text: one ``token v1 ... vd`` line per token, blank line between sentences."""
    sentences, current, dim = [], [], None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                if current:
                    sentences.append(np.array(current))
                    current = []
                continue
            values = parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim or dim == 0:
                raise FormatError(f"line {lineno}: expected {dim} values, found {len(values)}")
            try:
                vec = [float(v) for v in values]
            except ValueError:
                raise FormatError(f"line {lineno}: non-numeric vector value") from None
            if not all(math.isfinite(v) for v in vec):
                raise FormatError(f"line {lineno}: non-finite vector value")
            current.append(vec)
    if current:
        sentences.append(np.array(current))
    if dim is None:
        raise FormatError(f"{path}: no vectors")
    return PrecomputedVectorFile(dim, sentences)


@dataclass
class CompositeEmbedder:
    slots: list

    def __post_init__(self):
        if not self.slots or self.total_dim <= 0:
            raise ShapeError("composite embedder needs at least one slot with positive dim")

    @property
    def total_dim(self) -> int:
        return sum(slot.dim for slot in self.slots)


def embed_sentence(embedder: CompositeEmbedder, sentence: LabeledSentence,
                   sentence_index: int | None = None) -> np.ndarray:
    n = len(sentence)
    parts = []
    for slot in embedder.slots:
        if isinstance(slot, PrecomputedVectorFile):
            parts.append(slot.vectors(sentence_index, n))
        else:
            parts.append(np.stack([slot.lookup(tok) for tok in sentence.tokens]))
    return np.concatenate(parts, axis=1)


# ---------------------------------------------------------------- similarity


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ShapeError(f"cosine: shapes {u.shape} and {v.shape} differ")
    su, sv = float(np.max(np.abs(u), initial=0.0)), float(np.max(np.abs(v), initial=0.0))
    if su == 0.0 or sv == 0.0:
        raise UndefinedSimilarityError("cosine similarity is undefined for a zero vector")
    # rescale first so tiny or huge entries do not under/overflow the norms
    u, v = u / su, v / sv
    nu = math.sqrt(float(u @ u))
    nv = math.sqrt(float(v @ v))
    return min(1.0, max(-1.0, float(u @ v) / (nu * nv)))


@dataclass
class NeighborIndex:
    m: int
    entries: dict[str, list[tuple[str, float]]]
    missing: list[str] = field(default_factory=list)

    def neighbors(self, word: str) -> list[tuple[str, float]]:
        return self.entries.get(word, [])

    def lookup(self, token) -> list[tuple[str, float]]:
        """Neighbors for a token: exact surface first, then lowercased; first non-empty hit wins."""
        for key in (token.surface, token.normalized):
            found = self.entries.get(key)
            if found:
                return found
        return []

    def neighbor_vocab(self) -> list[str]:
        """Distinct neighbor words in first-seen order (sorted query order)."""
        seen: dict[str, None] = {}
        for word in sorted(self.entries):
            for nb, _ in self.entries[word]:
                seen.setdefault(nb)
        return list(seen)

    def __eq__(self, other):
        return isinstance(other, NeighborIndex) and self.m == other.m and self.entries == other.entries


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("SANER_THREADS", "")))
    except ValueError:
        return max(1, os.cpu_count() or 1)


def _top_m(sims: np.ndarray, m: int) -> np.ndarray:
    """Row indices of the m largest sims; ties go to the smaller index."""
    if m <= 0:
        return np.empty(0, dtype=np.int64)
    if m < sims.size:
        threshold = np.partition(sims, sims.size - m)[sims.size - m]
        candidates = np.flatnonzero(sims >= threshold)
    else:
        candidates = np.arange(sims.size)
    order = np.lexsort((candidates, -sims[candidates]))
    return candidates[order[:m]]


def build_neighbor_index(source: EmbeddingTable, query_vocab: Iterable[str], m: int = 10,
                         chunk: int = 64) -> NeighborIndex:
    if m < 1:
        raise ValueError("m must be >= 1")
    words = source.words
    matrix = source.matrix
    norms = np.sqrt(np.einsum("ij,ij->i", matrix, matrix))
    usable = norms > 0
    queries = sorted(set(query_vocab))
    present = [w for w in queries if w in source.vocab]
    missing = [w for w in queries if w not in source.vocab]
    entries: dict[str, list[tuple[str, float]]] = {w: [] for w in missing}

    def work(batch: list[str]) -> dict[str, list[tuple[str, float]]]:
        rows = np.array([source.vocab[w] for w in batch], dtype=np.int64)
        dots = matrix[rows] @ matrix.T
        out = {}
        for k, (word, row) in enumerate(zip(batch, rows)):
            if not usable[row]:
                out[word] = []
                continue
            with np.errstate(invalid="ignore", divide="ignore"):
                sims = dots[k] / (norms * norms[row])
            sims = np.clip(sims, -1.0, 1.0)
            sims[~usable] = -np.inf
            sims[row] = -np.inf
            valid = int(np.count_nonzero(np.isfinite(sims)))
            top = _top_m(sims, min(m, valid))
            out[word] = [(words[j], float(sims[j])) for j in top]
        return out

    batches = [present[i:i + chunk] for i in range(0, len(present), chunk)]
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        for result in pool.map(work, batches):
            entries.update(result)
    ordered = {w: entries[w] for w in queries}
    return NeighborIndex(m, ordered, missing)


# ---------------------------------------------------------------- neighbor cache

NBR_MAGIC = b"SANERNBR"
NBR_VERSION = 1


def _pack_word(word: str) -> bytes:
    raw = word.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def encode_neighbor_index(index: NeighborIndex) -> bytes:
    parts = [NBR_MAGIC, struct.pack("<II", NBR_VERSION, index.m)]
    for word, neighbors in index.entries.items():
        parts.append(_pack_word(word))
        parts.append(struct.pack("<I", len(neighbors)))
        for nb, sim in neighbors:
            parts.append(_pack_word(nb))
            parts.append(struct.pack("<d", sim))
    return b"".join(parts)


def decode_neighbor_index(buf: bytes) -> NeighborIndex:
    r = _Reader(buf)
    if r.read(len(NBR_MAGIC)) != NBR_MAGIC:
        raise FormatError("not a neighbor cache (bad magic)")
    version, m = r.unpack("<II")
    if version != NBR_VERSION:
        raise FormatError(f"neighbor cache version {version} is not supported (expected {NBR_VERSION})")
    entries = {}
    while not r.at_end():
        word = r.string()
        (k,) = r.unpack("<I")
        if k > m:
            raise FormatError(f"entry {word!r} lists {k} neighbors, more than m={m}")
        entries[word] = [(r.string(), r.unpack("<d")[0]) for _ in range(k)]
    return NeighborIndex(m, entries)


def save_neighbor_index(path, index: NeighborIndex) -> None:
    Path(path).write_bytes(encode_neighbor_index(index))


def load_neighbor_index(path) -> NeighborIndex:
    return decode_neighbor_index(Path(path).read_bytes())
