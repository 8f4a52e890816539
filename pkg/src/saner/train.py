"""Mini-batch training with dev-set model selection."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autodiff import ParameterStore, adam_step, backward
from .corpus import BIOES, LabeledSentence, TagScheme, entity_labels, to_scheme
from .embeddings import CompositeEmbedder, NeighborIndex
from .errors import DivergenceError, NonFiniteError
from .evaluate import conlleval_score
from .model import ModelConfig, Tagger, batch_loss, embed_all, make_batch, predict

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    tagger: Tagger
    best_params: ParameterStore
    best_epoch: int
    best_f1: float
    log: list[dict] = field(default_factory=list)

    def best_tagger(self) -> Tagger:
        t = self.tagger
        return Tagger(t.config, t.tags, t.input_dim, t.aug_vocab, self.best_params)


def bucketed_batches(lengths: Sequence[int], batch_size: int, rng: np.random.Generator,
                     pool_factor: int = 8) -> list[np.ndarray]:
    """Shuffle, sort by length inside pools of ``pool_factor`` batches, then shuffle batch order."""
    order = rng.permutation(len(lengths))
    batches = []
    pool = batch_size * pool_factor
    for start in range(0, len(order), pool):
        chunk = order[start:start + pool]
        chunk = chunk[np.argsort([lengths[i] for i in chunk], kind="stable")]
        batches.extend(chunk[i:i + batch_size] for i in range(0, len(chunk), batch_size))
    return [batches[i] for i in rng.permutation(len(batches))]


def tag_inventory(train_data: Sequence[LabeledSentence]) -> list[str]:
    return TagScheme(BIOES, entity_labels(train_data)).tag_set()


def train(config: ModelConfig, train_data: Sequence[LabeledSentence], dev_data: Sequence[LabeledSentence],
          embedder: CompositeEmbedder, neighbor_index: NeighborIndex | None,
          dev_embedder: CompositeEmbedder | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train for ``config.epochs`` epochs; keep the parameters with the best dev F1 (earliest on ties).

    Input embeddings are computed once up front and never enter the parameter
    store, so they cannot be updated.
    """
    if not train_data or not dev_data:
        raise ValueError("training and development data must be non-empty")
    train_data = to_scheme(train_data, TagScheme(BIOES))
    dev_data = to_scheme(dev_data, TagScheme(BIOES))
    init_seq, order_seq, drop_seq = np.random.SeedSequence(config.seed).spawn(3)
    order_rng, drop_rng = np.random.default_rng(order_seq), np.random.default_rng(drop_seq)

    tagger = Tagger.create(config, tag_inventory(train_data), embedder.total_dim, neighbor_index,
                           np.random.default_rng(init_seq))
    train_inputs = embed_all(embedder, train_data)
    dev_inputs = embed_all(dev_embedder or embedder, dev_data)
    lengths = [len(s) for s in train_data]

    result = TrainResult(tagger, tagger.params.copy(), 0, -1.0)
    beta1, beta2 = config.betas
    for epoch in range(1, config.epochs + 1):
        losses = []
        for b, idx in enumerate(bucketed_batches(lengths, config.batch_size, order_rng)):
            batch = make_batch(tagger, [train_data[i] for i in idx], [train_inputs[i] for i in idx],
                               neighbor_index)
            try:
                loss = batch_loss(tagger, batch, train=True, rng=drop_rng)
                backward(loss, tagger.params)
                adam_step(tagger.params, config.lr, beta1, beta2, config.eps)
            except NonFiniteError as exc:
                raise DivergenceError(f"epoch {epoch}, batch {b}: {exc}") from None
            value = float(loss.data)
            if not np.isfinite(value):
                raise DivergenceError(f"epoch {epoch}, batch {b}: loss is {value}")
            losses.append(value)
        preds = predict(tagger, dev_data, dev_inputs, neighbor_index, config.batch_size)
        report = conlleval_score(dev_data, preds)
        entry = {"epoch": epoch, "loss": float(np.mean(losses)), "dev_p": report.precision,
                 "dev_r": report.recall, "dev_f1": report.f1}
        result.log.append(entry)
        log.info("epoch %d loss %.4f dev F1 %.4f", epoch, entry["loss"], report.f1)
        if report.f1 > result.best_f1:
            result.best_params = tagger.params.copy()
            result.best_epoch, result.best_f1 = epoch, report.f1
        if on_epoch is not None:
            on_epoch(entry)
    return result


def format_log(entries: Sequence[dict]) -> str:
    return "".join(json.dumps(e) + "\n" for e in entries)
