"""Run configuration: a TOML document with [data], [embeddings], [model], [model.encoder], [train]."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli
import tomli_w

from .encoder import EncoderConfig
from .errors import ConfigError
from .model import ModelConfig

SPLITS = ("train", "dev", "test")


@dataclass
class DataConfig:
    train: str | None = None
    dev: str | None = None
    test: str | None = None
    column: int = 1
    scheme: str = "BIO"


@dataclass
class EmbeddingConfig:
    static: list[str] = field(default_factory=list)
    precomputed: dict[str, list[str]] = field(default_factory=dict)
    unk_policy: str = "zero"
    neighbor_source: str | None = None
    neighbor_cache: str | None = None


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    embeddings: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    model: ModelConfig = field(default_factory=ModelConfig)

    def to_dict(self) -> dict:
        model = self.model.to_dict()
        train = {k: model.pop(k) for k in ("lr", "eps", "epochs", "batch_size")}
        beta1, beta2 = model.pop("betas")
        train.update(beta1=beta1, beta2=beta2)
        model["encoder"].pop("dropout_rate")
        out = {"data": dataclasses.asdict(self.data), "embeddings": dataclasses.asdict(self.embeddings),
               "model": model, "train": train}
        return _drop_none(out)

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())


def _drop_none(obj):
    if isinstance(obj, dict):
        return {k: _drop_none(v) for k, v in obj.items() if v is not None}
    return obj


_MODEL_KEYS = {"mode", "m", "d_out", "dropout", "seed", "ds_mean", "constrain_decode", "encoder"}
_TRAIN_KEYS = {"lr", "beta1", "beta2", "eps", "epochs", "batch_size"}
_ENCODER_KEYS = {f.name for f in dataclasses.fields(EncoderConfig)} - {"dropout_rate"}


def _check_keys(section: str, got: dict, allowed: set[str]) -> None:
    unknown = sorted(set(got) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")


def _resolve(base: Path, value):
    if value is None:
        return None
    p = Path(value)
    return str(p if p.is_absolute() else (base / p).resolve())


def from_dict(doc: dict[str, Any], base_dir: Path | str = ".", overrides: dict[str, Any] | None = None) -> RunConfig:
    base = Path(base_dir)
    _check_keys("top level", doc, {"data", "embeddings", "model", "train"})
    data_doc = dict(doc.get("data", {}))
    emb_doc = dict(doc.get("embeddings", {}))
    model_doc = dict(doc.get("model", {}))
    train_doc = dict(doc.get("train", {}))
    _check_keys("data", data_doc, {f.name for f in dataclasses.fields(DataConfig)})
    _check_keys("embeddings", emb_doc, {f.name for f in dataclasses.fields(EmbeddingConfig)})
    _check_keys("model", model_doc, _MODEL_KEYS)
    _check_keys("train", train_doc, _TRAIN_KEYS)
    enc_doc = dict(model_doc.pop("encoder", {}))
    _check_keys("model.encoder", enc_doc, _ENCODER_KEYS)
    _check_keys("embeddings.precomputed", emb_doc.get("precomputed", {}), set(SPLITS))

    for split in SPLITS:
        data_doc[split] = _resolve(base, data_doc.get(split))
    emb_doc["static"] = [_resolve(base, p) for p in emb_doc.get("static", [])]
    emb_doc["precomputed"] = {k: [_resolve(base, p) for p in v] for k, v in emb_doc.get("precomputed", {}).items()}
    for key in ("neighbor_source", "neighbor_cache"):
        emb_doc[key] = _resolve(base, emb_doc.get(key))

    params = {**model_doc, **train_doc}
    if "beta1" in params or "beta2" in params:
        defaults = ModelConfig().betas
        params["betas"] = (params.pop("beta1", defaults[0]), params.pop("beta2", defaults[1]))
    for key, value in (overrides or {}).items():
        if value is not None:
            params[key] = value
    try:
        data = DataConfig(**data_doc)
        emb = EmbeddingConfig(**emb_doc)
        model = ModelConfig(encoder=EncoderConfig(**enc_doc), **params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if data.scheme not in ("BIO", "BIOES"):
        raise ConfigError(f"data.scheme must be BIO or BIOES, got {data.scheme!r}")
    if emb.unk_policy not in ("zero", "mean"):
        raise ConfigError(f"embeddings.unk_policy must be 'zero' or 'mean', got {emb.unk_policy!r}")
    return RunConfig(data, emb, model)


def load(path: str | Path | None, overrides: dict[str, Any] | None = None) -> RunConfig:
    if path is None:
        return from_dict({}, Path.cwd(), overrides)
    path = Path(path)
    try:
        doc = tomli.loads(path.read_text(encoding="utf-8"))
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(doc, path.parent, overrides)
