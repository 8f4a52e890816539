"""CoNLL reading/writing, BIO/BIOES handling, span extraction and corpus statistics."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ParseError, SchemeError

BIO = "BIO"
BIOES = "BIOES"
_PREFIXES = {BIO: frozenset("BI"), BIOES: frozenset("BIES")}


@dataclass(frozen=True)
class Token:
    surface: str
    normalized: str = ""

    def __post_init__(self):
        if not self.surface or any(c.isspace() for c in self.surface):
            raise ValueError(f"token surface must be non-empty without whitespace: {self.surface!r}")
        if not self.normalized:
            object.__setattr__(self, "normalized", self.surface.lower())


@dataclass(frozen=True)
class LabeledSentence:
    tokens: tuple[Token, ...]
    tags: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "tags", tuple(self.tags))
        if not self.tokens or len(self.tokens) != len(self.tags):
            raise ValueError("a sentence needs >= 1 token and one tag per token")

    @classmethod
    def from_words(cls, words: Sequence[str], tags: Sequence[str]) -> "LabeledSentence":
        return cls(tuple(Token(w) for w in words), tuple(tags))

    @property
    def words(self) -> list[str]:
        return [t.surface for t in self.tokens]

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True)
class TagScheme:
    """Tagging scheme plus an optional closed set of entity types (None = open)."""

    kind: str = BIOES
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in _PREFIXES:
            raise SchemeError(f"unknown tag scheme {self.kind!r}")
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(dict.fromkeys(self.labels)))

    def parse(self, tag: str) -> tuple[str, str | None]:
        if tag == "O":
            return "O", None
        prefix, sep, label = tag.partition("-")
        if not sep or not label or prefix not in _PREFIXES[self.kind]:
            raise SchemeError(f"tag {tag!r} is not valid under {self.kind}")
        if self.labels is not None and label not in self.labels:
            raise SchemeError(f"unknown entity type {label!r} in tag {tag!r}")
        return prefix, label

    def tag_set(self) -> list[str]:
        """All tags of the scheme, "O" first, then prefixes per label in label order."""
        if self.labels is None:
            raise SchemeError("an open label set has no finite tag set")
        prefixes = "BIES" if self.kind == BIOES else "BI"
        return ["O"] + [f"{p}-{lab}" for lab in self.labels for p in prefixes]


@dataclass(frozen=True)
class EntitySpan:
    type: str
    start: int
    end: int

    def __post_init__(self):
        if not 0 <= self.start <= self.end:
            raise ValueError(f"invalid span bounds ({self.start}, {self.end})")


@dataclass
class CorpusStats:
    n_sentences: int
    n_entities: int
    pct_unseen: float | None = None

    def to_json(self) -> str:
        return json.dumps({"sentences": self.n_sentences, "entities": self.n_entities,
                           "pct_unseen": self.pct_unseen})


# ---------------------------------------------------------------- validation


def validate_tags(tags: Sequence[str], scheme: TagScheme) -> None:
    """Raise SchemeError unless ``tags`` is a well-formed sequence under ``scheme``."""
    open_label = None  # type of the span currently open (B or I seen, not yet closed)
    for i, tag in enumerate(tags):
        prefix, label = scheme.parse(tag)
        continuing = prefix in ("I", "E")
        if continuing and open_label != label:
            raise SchemeError(f"position {i}: {tag!r} does not continue an open span")
        if not continuing and open_label is not None and scheme.kind == BIOES:
            raise SchemeError(f"position {i}: span of type {open_label} never closed before {tag!r}")
        open_label = label if prefix in ("B", "I") else None
    if open_label is not None and scheme.kind == BIOES:
        raise SchemeError(f"span of type {open_label} is not closed at sentence end")


def is_valid(tags: Sequence[str], scheme: TagScheme) -> bool:
    try:
        validate_tags(tags, scheme)
    except SchemeError:
        return False
    return True


# ---------------------------------------------------------------- spans


def _split(tag: str) -> tuple[str, str | None]:
    if tag == "O":
        return "O", None
    prefix, _, label = tag.partition("-")
    return prefix, label


def _chunk_end(prev: str, cur: str) -> bool:
    p1, t1 = _split(prev)
    p2, t2 = _split(cur)
    if p1 == "O":
        return False
    if p2 == "O":
        return True
    if t1 != t2:
        return True
    return p2 in ("B", "S") or p1 in ("E", "S")


def _chunk_start(prev: str, cur: str) -> bool:
    p1, t1 = _split(prev)
    p2, t2 = _split(cur)
    if p2 == "O":
        return False
    if p1 == "O":
        return True
    if t1 != t2:
        return True
    return p2 in ("B", "S") or p1 in ("E", "S")


def lenient_spans(tags: Sequence[str]) -> list[EntitySpan]:
    """Chunks by conlleval's boundary rules; accepts any mix of B/I/E/S/O prefixes."""
    spans = []
    start = None
    prev = "O"
    for i, tag in enumerate(list(tags) + ["O"]):
        if start is not None and _chunk_end(prev, tag):
            spans.append(EntitySpan(_split(prev)[1], start, i - 1))
            start = None
        if _chunk_start(prev, tag):
            start = i
        prev = tag
    return spans


def tags_to_spans(tags: Sequence[str], scheme: TagScheme, strict: bool = True) -> list[EntitySpan]:
    if strict:
        validate_tags(tags, scheme)
    else:
        for tag in tags:
            scheme.parse(tag)
    return lenient_spans(tags)


def spans_to_tags(spans: Iterable[EntitySpan], length: int, scheme: TagScheme) -> list[str]:
    tags = ["O"] * length
    for span in sorted(spans, key=lambda s: s.start):
        if span.end >= length:
            raise ValueError(f"span {span} exceeds sentence length {length}")
        if any(t != "O" for t in tags[span.start:span.end + 1]):
            raise ValueError(f"overlapping span {span}")
        if scheme.kind == BIOES and span.start == span.end:
            tags[span.start] = f"S-{span.type}"
            continue
        tags[span.start] = f"B-{span.type}"
        for i in range(span.start + 1, span.end + 1):
            tags[i] = f"I-{span.type}"
        if scheme.kind == BIOES:
            tags[span.end] = f"E-{span.type}"
    return tags


def bio_to_bioes(tags: Sequence[str]) -> list[str]:
    validate_tags(tags, TagScheme(BIO))
    return spans_to_tags(lenient_spans(tags), len(tags), TagScheme(BIOES))


def bioes_to_bio(tags: Sequence[str]) -> list[str]:
    validate_tags(tags, TagScheme(BIOES))
    return spans_to_tags(lenient_spans(tags), len(tags), TagScheme(BIO))


def repair_tags(tags: Sequence[str], scheme: TagScheme) -> list[str]:
    """Re-render a possibly malformed sequence using conlleval chunk boundaries.

    A bare ``I-X`` opening a span becomes ``B-X`` (``S-X`` for a one-token span
    under BIOES); already valid sequences come back unchanged.
    """
    for tag in tags:
        scheme.parse(tag)
    return spans_to_tags(lenient_spans(tags), len(tags), scheme)


# ---------------------------------------------------------------- files


def read_conll(path, column: int = 1, scheme: TagScheme = TagScheme(BIOES),
               mode: str = "strict") -> list[LabeledSentence]:
    if mode not in ("strict", "repair"):
        raise ValueError(f"mode must be 'strict' or 'repair', got {mode!r}")
    text = Path(path).read_text(encoding="utf-8")
    return parse_conll(text, column, scheme, mode)


def parse_conll(text: str, column: int = 1, scheme: TagScheme = TagScheme(BIOES),
                mode: str = "strict") -> list[LabeledSentence]:
    sentences: list[LabeledSentence] = []
    words: list[str] = []
    tags: list[str] = []
    start_line = 0

    def flush():
        if not words:
            return
        seq = list(tags)
        try:
            if mode == "strict":
                validate_tags(seq, scheme)
            else:
                seq = repair_tags(seq, scheme)
        except SchemeError as exc:
            raise SchemeError(f"sentence starting at line {start_line}: {exc}") from None
        sentences.append(LabeledSentence.from_words(words, seq))
        words.clear()
        tags.clear()

    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            flush()
            continue
        if fields[0] == "-DOCSTART-":
            continue
        if len(fields) < column + 1:
            raise ParseError(f"expected at least {column + 1} fields, found {len(fields)}", lineno)
        if not words:
            start_line = lineno
        words.append(fields[0])
        tags.append(fields[column])
    flush()
    return sentences


def format_conll(sentences: Iterable[LabeledSentence], tags: Iterable[Sequence[str]] | None = None) -> str:
    """Two-column CoNLL text; ``tags`` overrides each sentence's own tags."""
    lines = []
    tag_iter = iter(tags) if tags is not None else None
    for sent in sentences:
        seq = next(tag_iter) if tag_iter is not None else sent.tags
        lines.extend(f"{tok.surface} {tag}" for tok, tag in zip(sent.tokens, seq))
        lines.append("")
    return "\n".join(lines) + ("\n" if lines else "")


def write_conll(path, sentences: Iterable[LabeledSentence], tags=None) -> None:
    Path(path).write_text(format_conll(sentences, tags), encoding="utf-8")


def to_scheme(sentences: Iterable[LabeledSentence], scheme: TagScheme) -> list[LabeledSentence]:
    """Re-render every sentence's tags in ``scheme`` (span-preserving)."""
    return [LabeledSentence(s.tokens, tuple(spans_to_tags(lenient_spans(s.tags), len(s), scheme)))
            for s in sentences]


def entity_labels(sentences: Iterable[LabeledSentence]) -> tuple[str, ...]:
    return tuple(sorted({span.type for s in sentences for span in lenient_spans(s.tags)}))


# ---------------------------------------------------------------- statistics


def entity_surface(sentence: LabeledSentence, span: EntitySpan) -> str:
    return " ".join(t.surface for t in sentence.tokens[span.start:span.end + 1])


def entity_surfaces(sentences: Iterable[LabeledSentence]) -> set[str]:
    return {entity_surface(s, span) for s in sentences for span in lenient_spans(s.tags)}


def corpus_stats(data: Sequence[LabeledSentence],
                 train_ref: Sequence[LabeledSentence] | None = None) -> CorpusStats:
    counts = Counter()
    unseen = 0
    seen = entity_surfaces(train_ref) if train_ref is not None else set()
    for sent in data:
        for span in lenient_spans(sent.tags):
            counts[span.type] += 1
            if entity_surface(sent, span) not in seen:
                unseen += 1
    n_entities = sum(counts.values())
    pct = None
    if train_ref is not None:
        pct = 100.0 * unseen / n_entities if n_entities else 0.0
    return CorpusStats(len(data), n_entities, pct)


def vocabulary(sentences: Iterable[LabeledSentence]) -> list[str]:
    """Distinct surfaces and their lowercased forms, in first-seen order."""
    vocab: dict[str, None] = {}
    for sent in sentences:
        for tok in sent.tokens:
            vocab.setdefault(tok.surface)
            vocab.setdefault(tok.normalized)
    return list(vocab)
