"""Model assembly: embeddings -> encoder -> augmentation -> gate -> projection -> CRF."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .augment import attend, direct_sum, init_aug_table
from .autodiff import ParameterStore, Tensor
from .corpus import BIOES, LabeledSentence, TagScheme
from .crf import bioes_constraints, crf_nll_loss, emissions, init_crf, viterbi
from .embeddings import CompositeEmbedder, NeighborIndex, embed_sentence
from .encoder import EncoderConfig, encode, init_encoder
from .errors import ConfigError
from .gate import fuse, init_gate, init_projection, no_gate_fuse, project

MODES = ("baseline", "DS", "DS+GA", "AU", "AU+GA")


@dataclass(frozen=True)
class ModelConfig:
    mode: str = "AU+GA"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    m: int = 10
    d_out: int | None = None
    dropout: float = 0.2
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.99)
    eps: float = 1e-8
    epochs: int = 50
    batch_size: int = 32
    seed: int = 42
    ds_mean: bool = False
    constrain_decode: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.m < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("m and batch_size must be positive, epochs non-negative")
        if self.encoder.dropout_rate != self.dropout:
            object.__setattr__(self, "encoder", dataclasses.replace(self.encoder, dropout_rate=self.dropout))
        if self.d_out is None:
            object.__setattr__(self, "d_out", self.encoder.model_dim)
        object.__setattr__(self, "betas", tuple(self.betas))

    @property
    def augmented(self) -> bool:
        return self.mode != "baseline"

    @property
    def attentive(self) -> bool:
        return self.mode.startswith("AU")

    @property
    def gated(self) -> bool:
        return self.mode.endswith("+GA")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["betas"] = list(self.betas)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        data = dict(data)
        enc = EncoderConfig(**data.pop("encoder", {}))
        if "betas" in data:
            data["betas"] = tuple(data["betas"])
        return cls(encoder=enc, **data)


@dataclass
class Batch:
    """Padded batch: ``mask`` marks real tokens, ``nb_mask`` real neighbors."""

    E: np.ndarray
    mask: np.ndarray
    lengths: list[int]
    gold: np.ndarray
    nb_ids: np.ndarray
    nb_mask: np.ndarray
    nb_words: list[list[list[str]]]


@dataclass
class Tagger:
    config: ModelConfig
    tags: list[str]
    input_dim: int
    aug_vocab: list[str]
    params: ParameterStore

    @classmethod
    def create(cls, config: ModelConfig, tags: Sequence[str], input_dim: int,
               neighbor_index: NeighborIndex | None, rng: np.random.Generator) -> "Tagger":
        aug_vocab = neighbor_index.neighbor_vocab() if (config.augmented and neighbor_index) else []
        store = ParameterStore()
        d = config.encoder.model_dim
        init_encoder(store, config.encoder, input_dim, rng)
        if config.augmented:
            init_aug_table(store, len(aug_vocab), d, rng)
        if config.gated:
            init_gate(store, d, rng)
        init_projection(store, d, config.d_out, rng)
        init_crf(store, config.d_out, len(tags), rng)
        return cls(config, list(tags), input_dim, aug_vocab, store)

    def metadata(self) -> dict:
        return {"config": self.config.to_dict(), "tags": self.tags, "input_dim": self.input_dim,
                "aug_vocab": self.aug_vocab}

    @classmethod
    def from_checkpoint(cls, store: ParameterStore, metadata: dict) -> "Tagger":
        return cls(ModelConfig.from_dict(metadata["config"]), list(metadata["tags"]),
                   int(metadata["input_dim"]), list(metadata["aug_vocab"]), store)

    @property
    def tag_index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tags)}

    @property
    def scheme(self) -> TagScheme:
        labels = tuple(dict.fromkeys(t.split("-", 1)[1] for t in self.tags if t != "O"))
        return TagScheme(BIOES, labels)


def make_batch(tagger: Tagger, sentences: Sequence[LabeledSentence], inputs: Sequence[np.ndarray],
               neighbor_index: NeighborIndex | None) -> Batch:
    """Pad pre-embedded sentences and resolve neighbor ids against the tagger's vocabulary."""
    B = len(sentences)
    n = max(len(s) for s in sentences)
    m = tagger.config.m
    E = np.zeros((B, n, tagger.input_dim))
    mask = np.zeros((B, n), dtype=bool)
    gold = np.zeros((B, n), dtype=np.int64)
    nb_ids = np.zeros((B, n, m), dtype=np.int64)
    nb_mask = np.zeros((B, n, m), dtype=bool)
    nb_words: list[list[list[str]]] = []
    tag_index = tagger.tag_index
    aug_index = {w: i for i, w in enumerate(tagger.aug_vocab)}
    use_neighbors = tagger.config.augmented and neighbor_index is not None
    for b, (sent, x) in enumerate(zip(sentences, inputs)):
        k = len(sent)
        E[b, :k] = x
        mask[b, :k] = True
        gold[b, :k] = [tag_index.get(t, 0) for t in sent.tags]
        words_b = []
        for i, tok in enumerate(sent.tokens):
            kept = []
            if use_neighbors:
                for word, _ in neighbor_index.lookup(tok)[:m]:
                    if word in aug_index:
                        nb_ids[b, i, len(kept)] = aug_index[word]
                        nb_mask[b, i, len(kept)] = True
                        kept.append(word)
            words_b.append(kept)
        nb_words.append(words_b)
    return Batch(E, mask, [len(s) for s in sentences], gold, nb_ids, nb_mask, nb_words)


def embed_all(embedder: CompositeEmbedder, sentences: Sequence[LabeledSentence]) -> list[np.ndarray]:
    return [embed_sentence(embedder, s, i) for i, s in enumerate(sentences)]


def forward(tagger: Tagger, batch: Batch, train: bool = False, rng: np.random.Generator | None = None,
            trace: dict | None = None, force_gate=None) -> Tensor:
    """Emission scores of shape (batch, n_max, |tags|)."""
    cfg, params = tagger.config, tagger.params
    H = encode(cfg.encoder, params, batch.E, batch.mask, train, rng)
    if not cfg.augmented:
        fused = no_gate_fuse(H, ad.Tensor(np.zeros(H.shape)))
    else:
        rows = ad.take(params["augment.E"], batch.nb_ids)
        if cfg.attentive:
            v, weights = attend(H, rows, batch.nb_mask)
            if trace is not None:
                trace["weights"] = weights.data
        else:
            v = direct_sum(rows, batch.nb_mask, cfg.ds_mean)
        fused = fuse(H, v, params, force_gate) if cfg.gated else no_gate_fuse(H, v)
    if trace is not None:
        trace["gate"] = fused.g.data
    O = project(fused.u, params["output.Wu"])
    return emissions(O, params["crf.Wc"], params["crf.bc"])


def batch_loss(tagger: Tagger, batch: Batch, train: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
    """Mean CRF negative log-likelihood over the sentences of the batch."""
    p = tagger.params
    scores = forward(tagger, batch, train, rng)
    total = crf_nll_loss(scores, p["crf.A"], p["crf.start"], p["crf.stop"], batch.gold, batch.lengths)
    return total * (1.0 / len(batch.lengths))


def decode_scores(tagger: Tagger, scores: np.ndarray, lengths: Sequence[int]) -> list[list[str]]:
    p = tagger.params
    allowed = bioes_constraints(tagger.tags) if tagger.config.constrain_decode else None
    out = []
    for b, n in enumerate(lengths):
        path = viterbi(scores[b, :n], p["crf.A"].data, p["crf.start"].data, p["crf.stop"].data, allowed)
        out.append([tagger.tags[i] for i in path])
    return out


def predict(tagger: Tagger, sentences: Sequence[LabeledSentence], inputs: Sequence[np.ndarray],
            neighbor_index: NeighborIndex | None, batch_size: int = 32) -> list[list[str]]:
    preds: list[list[str]] = []
    for start in range(0, len(sentences), batch_size):
        batch = make_batch(tagger, sentences[start:start + batch_size], inputs[start:start + batch_size],
                           neighbor_index)
        scores = forward(tagger, batch).data
        preds.extend(decode_scores(tagger, scores, batch.lengths))
    return preds
