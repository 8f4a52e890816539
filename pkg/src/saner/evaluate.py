"""conlleval-compatible scoring, unseen-entity recall and attention/gate dumps."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .corpus import LabeledSentence, entity_surface, entity_surfaces, lenient_spans
from .errors import ShapeError, UnsupportedModeError


def prf(correct: int, predicted: int, gold: int) -> tuple[float, float, float]:
    p = correct / predicted if predicted else 0.0
    r = correct / gold if gold else 0.0
    # 2PR/(P+R) simplifies to 2c/(p+g); this form is correctly rounded
    f = 2 * correct / (predicted + gold) if correct else 0.0
    return p, r, f


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    accuracy: float
    gold: int
    predicted: int
    correct: int
    per_type: dict[str, dict[str, float]] = field(default_factory=dict)
    unseen_count: int | None = None
    unseen_recall: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _as_tags(pred) -> list[str]:
    return [str(t) for t in pred]


def conlleval_score(gold: Sequence[LabeledSentence], pred: Sequence[Sequence[str]]) -> EvalReport:
    """Entity-level micro P/R/F1 by exact span+type match, plus token accuracy."""
    if len(gold) != len(pred):
        raise ShapeError(f"{len(gold)} gold sentences but {len(pred)} predictions")
    n_gold, n_pred, n_correct = Counter(), Counter(), Counter()
    tokens = right = 0
    for i, (sent, tags) in enumerate(zip(gold, pred)):
        tags = _as_tags(tags)
        if len(tags) != len(sent):
            raise ShapeError(f"sentence {i}: {len(sent)} tokens but {len(tags)} predicted tags")
        g = {(s.type, s.start, s.end) for s in lenient_spans(sent.tags)}
        p = {(s.type, s.start, s.end) for s in lenient_spans(tags)}
        n_gold.update(t for t, _, _ in g)
        n_pred.update(t for t, _, _ in p)
        n_correct.update(t for t, _, _ in g & p)
        tokens += len(tags)
        right += sum(a == b for a, b in zip(sent.tags, tags))
    per_type = {}
    for label in sorted(set(n_gold) | set(n_pred)):
        p, r, f = prf(n_correct[label], n_pred[label], n_gold[label])
        per_type[label] = {"precision": p, "recall": r, "f1": f, "gold": n_gold[label],
                           "predicted": n_pred[label], "correct": n_correct[label]}
    total_c, total_p, total_g = sum(n_correct.values()), sum(n_pred.values()), sum(n_gold.values())
    p, r, f = prf(total_c, total_p, total_g)
    return EvalReport(p, r, f, right / tokens if tokens else 0.0, total_g, total_p, total_c, per_type)


def unseen_recall(train_data: Sequence[LabeledSentence], eval_data: Sequence[LabeledSentence],
                  pred: Sequence[Sequence[str]]) -> tuple[int, float | None]:
    """Gold entities whose surface never occurs as a training entity, and recall on them."""
    if len(eval_data) != len(pred):
        raise ShapeError(f"{len(eval_data)} sentences but {len(pred)} predictions")
    seen = entity_surfaces(train_data)
    count = hit = 0
    for sent, tags in zip(eval_data, pred):
        predicted = {(s.type, s.start, s.end) for s in lenient_spans(_as_tags(tags))}
        for span in lenient_spans(sent.tags):
            if entity_surface(sent, span) in seen:
                continue
            count += 1
            hit += (span.type, span.start, span.end) in predicted
    return count, (hit / count if count else None)


def inspection_dump(tagger, sentences: Sequence[LabeledSentence], inputs: Sequence[np.ndarray],
                    neighbor_index, batch_size: int = 32) -> list[dict]:
    """Per-token neighbor weights and mean gate activation for an attentive model."""
    from .model import decode_scores, forward, make_batch

    if not tagger.config.attentive:
        raise UnsupportedModeError(f"inspection needs an attentive (AU) model, not {tagger.config.mode!r}")
    dump = []
    for start in range(0, len(sentences), batch_size):
        chunk = sentences[start:start + batch_size]
        batch = make_batch(tagger, chunk, inputs[start:start + batch_size], neighbor_index)
        trace: dict = {}
        scores = forward(tagger, batch, trace=trace).data
        preds = decode_scores(tagger, scores, batch.lengths)
        for b, sent in enumerate(chunk):
            tokens = []
            for i, tok in enumerate(sent.tokens):
                words = batch.nb_words[b][i]
                weights = trace["weights"][b, i, :len(words)]
                tokens.append({
                    "token": tok.surface,
                    "gold": sent.tags[i],
                    "pred": preds[b][i],
                    "neighbors": [{"word": w, "weight": round(float(p), 6)} for w, p in zip(words, weights)],
                    "gate_mean": round(float(trace["gate"][b, i].mean()), 6),
                })
            dump.append({"tokens": tokens})
    return dump


def write_inspection(path, dump: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"sentences": dump}, fh, ensure_ascii=False, indent=1, sort_keys=True)
        fh.write("\n")
