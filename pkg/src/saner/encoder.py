"""Direction- and distance-aware transformer encoder.

Attention scores use un-scaled dot products with a signed sinusoidal encoding
of the offset ``i - j`` and two learned per-head bias vectors::

    score(i, j) = q_i.k_j + q_i.r_{i-j} + u.k_j + w.r_{i-j}

Each layer is attention -> residual -> LayerNorm -> ReLU feed-forward ->
residual -> LayerNorm (post-LN).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .errors import ShapeError


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    heads: int = 8
    model_dim: int = 128
    head_dim: int | None = None
    feedforward_dim: int = 256
    dropout_rate: float = 0.2

    def __post_init__(self):
        if self.head_dim is None:
            if self.model_dim % self.heads:
                raise ValueError(f"model_dim {self.model_dim} is not divisible by {self.heads} heads; "
                                 "set head_dim explicitly")
            object.__setattr__(self, "head_dim", self.model_dim // self.heads)
        if min(self.heads, self.model_dim, self.head_dim, self.feedforward_dim) < 1 or self.layers < 0:
            raise ValueError("encoder sizes must be positive")

    @classmethod
    def twelve_heads(cls, **overrides) -> "EncoderConfig":
        """12 heads of width 12, concatenated to 144 and projected back to 128."""
        return cls(**{"layers": 2, "heads": 12, "model_dim": 128, "head_dim": 12, **overrides})

    @property
    def attention_dim(self) -> int:
        return self.heads * self.head_dim


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_encoder(store: ParameterStore, config: EncoderConfig, input_dim: int,
                 rng: np.random.Generator, prefix: str = "encoder") -> None:
    d, a, f = config.model_dim, config.attention_dim, config.feedforward_dim
    store.add(f"{prefix}.in.W", _xavier(rng, input_dim, d))
    store.add(f"{prefix}.in.b", np.zeros(d))
    for layer in range(config.layers):
        p = f"{prefix}.L{layer}"
        for name in ("Wq", "Wk", "Wv"):
            store.add(f"{p}.attn.{name}", _xavier(rng, d, a))
        store.add(f"{p}.attn.u", rng.normal(0.0, 0.02, size=(config.heads, 1, config.head_dim)))
        store.add(f"{p}.attn.w", rng.normal(0.0, 0.02, size=(config.heads, 1, config.head_dim)))
        store.add(f"{p}.attn.Wo", _xavier(rng, a, d))
        store.add(f"{p}.attn.bo", np.zeros(d))
        store.add(f"{p}.ln1.g", np.ones(d))
        store.add(f"{p}.ln1.b", np.zeros(d))
        store.add(f"{p}.ff.W1", _xavier(rng, d, f))
        store.add(f"{p}.ff.b1", np.zeros(f))
        store.add(f"{p}.ff.W2", _xavier(rng, f, d))
        store.add(f"{p}.ff.b2", np.zeros(d))
        store.add(f"{p}.ln2.g", np.ones(d))
        store.add(f"{p}.ln2.b", np.zeros(d))


def sinusoid_table(max_offset: int, dim: int) -> np.ndarray:
    """Rows for offsets -max_offset..max_offset; row t holds sin/cos pairs of t * freq_k.

    The sine half is odd in t, so r_{+t} and r_{-t} differ whenever t != 0.
    """
    offsets = np.arange(-max_offset, max_offset + 1, dtype=np.float64)[:, None]
    freqs = 1.0 / np.power(10000.0, 2.0 * np.arange((dim + 1) // 2) / dim)
    angles = offsets * freqs[None, :]
    table = np.empty((offsets.shape[0], 2 * freqs.shape[0]))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table[:, :dim]


@lru_cache(maxsize=64)
def relative_matrix(n: int, dim: int) -> np.ndarray:
    """``R[i, j] = r_{i-j}`` for an n-token sentence, shape (n, n, dim)."""
    table = sinusoid_table(max(n - 1, 0), dim)
    idx = np.arange(n)[:, None] - np.arange(n)[None, :] + (n - 1)
    out = table[idx]
    out.flags.writeable = False
    return out


def relative_attention(q, k, v, rel: np.ndarray, u, w, mask=None, dropout_rate: float = 0.0,
                       rng=None, train: bool = False, trace: dict | None = None) -> Tensor:
    """Single- or multi-head relative attention over the last two axes.

    q, k, v have shape (..., n, d_head); ``rel`` is (n, n, d_head); u and w
    broadcast against q. ``mask`` marks real (True) versus padded keys.
    """
    q, k, v, u, w = (ad.as_tensor(t) for t in (q, k, v, u, w))
    n, dh = q.shape[-2], q.shape[-1]
    if k.shape[-2:] != (n, dh) or v.shape[-2] != n:
        raise ShapeError(f"relative_attention: q {q.shape}, k {k.shape}, v {v.shape} are incompatible")
    if rel.shape != (n, n, dh):
        raise ShapeError(f"relative_attention: relative table {rel.shape} does not cover {n} positions")
    content = ad.matmul(q + u, ad.swapaxes(k, -1, -2))
    lead = q.shape[:-2]
    qw = ad.reshape(q + w, lead + (n, 1, dh))
    positional = ad.reshape(ad.matmul(qw, ad.Tensor(np.swapaxes(rel, -1, -2))), lead + (n, n))
    weights = ad.softmax(content + positional, mask)
    if trace is not None:
        trace.setdefault("attention", []).append(weights.data)
    weights = ad.dropout(weights, dropout_rate, rng, train)
    return ad.matmul(weights, v)


def encode(config: EncoderConfig, params: ParameterStore, E, mask=None, train: bool = False,
           rng: np.random.Generator | None = None, prefix: str = "encoder",
           trace: dict | None = None) -> Tensor:
    """Map embeddings (n, d_in) or (batch, n, d_in) to hidden states of width model_dim."""
    E = ad.as_tensor(E)
    single = E.ndim == 2
    if single:
        E = ad.reshape(E, (1,) + E.shape)
    if E.ndim != 3:
        raise ShapeError(f"encode: expected (n, d_in) or (batch, n, d_in), got {E.shape}")
    W_in = params[f"{prefix}.in.W"]
    if E.shape[-1] != W_in.shape[0]:
        raise ShapeError(f"encode: input width {E.shape[-1]} but projection expects {W_in.shape[0]}")
    B, n, _ = E.shape
    H, dh, rate = config.heads, config.head_dim, config.dropout_rate
    key_mask = None if mask is None else np.asarray(mask, dtype=bool)[:, None, None, :]
    rel = relative_matrix(n, dh)

    x = E @ W_in + params[f"{prefix}.in.b"]
    for layer in range(config.layers):
        p = f"{prefix}.L{layer}"

        def heads(t):
            return ad.transpose(ad.reshape(t, (B, n, H, dh)), (0, 2, 1, 3))

        q = heads(x @ params[f"{p}.attn.Wq"])
        k = heads(x @ params[f"{p}.attn.Wk"])
        v = heads(x @ params[f"{p}.attn.Wv"])
        att = relative_attention(q, k, v, rel, params[f"{p}.attn.u"], params[f"{p}.attn.w"],
                                 key_mask, rate, rng, train, trace)
        att = ad.reshape(ad.transpose(att, (0, 2, 1, 3)), (B, n, H * dh))
        att = att @ params[f"{p}.attn.Wo"] + params[f"{p}.attn.bo"]
        x = ad.layer_norm(x + att, params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
        ff = ad.relu(x @ params[f"{p}.ff.W1"] + params[f"{p}.ff.b1"])
        ff = ad.dropout(ff @ params[f"{p}.ff.W2"] + params[f"{p}.ff.b2"], rate, rng, train)
        x = ad.layer_norm(x + ff, params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
    if single:
        x = ad.reshape(x, (n, config.model_dim))
    return x
