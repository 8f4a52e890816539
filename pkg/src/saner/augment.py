"""Semantic augmentation from retrieved similar words.

``attend`` weights each neighbor embedding by a softmax over its dot product
with the token's hidden state; ``direct_sum`` adds them without weighting.
Both accept arbitrary leading batch axes: ``h`` is (..., d), neighbor rows
are (..., m, d) and the optional mask (..., m) marks real neighbors.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .errors import ShapeError


class AugmentedVector(NamedTuple):
    v: Tensor
    weights: Tensor


def init_aug_table(store: ParameterStore, vocab_size: int, dim: int, rng: np.random.Generator,
                   name: str = "augment.E") -> Tensor:
    return store.add(name, rng.uniform(-0.1, 0.1, size=(max(1, vocab_size), dim)))


def _check(h: Tensor, rows: Tensor, op: str):
    if rows.ndim < 2 or rows.shape[-1] != h.shape[-1] or rows.shape[:-2] != h.shape[:-1]:
        raise ShapeError(f"{op}: hidden state {h.shape} and neighbor rows {rows.shape} are incompatible")


def attend(h, rows, mask=None) -> AugmentedVector:
    h, rows = ad.as_tensor(h), ad.as_tensor(rows)
    _check(h, rows, "attend")
    lead, (m, d) = h.shape[:-1], rows.shape[-2:]
    if m == 0:
        return AugmentedVector(ad.Tensor(np.zeros(h.shape)), ad.Tensor(np.zeros(lead + (0,))))
    scores = ad.reshape(ad.matmul(rows, ad.reshape(h, lead + (d, 1))), lead + (m,))
    p = ad.softmax(scores, mask)
    v = ad.reshape(ad.matmul(ad.reshape(p, lead + (1, m)), rows), lead + (d,))
    return AugmentedVector(v, p)


def direct_sum(rows, mask=None, mean: bool = False) -> Tensor:
    rows = ad.as_tensor(rows)
    if rows.ndim < 2:
        raise ShapeError(f"direct_sum: expected (..., m, d) rows, got {rows.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != rows.shape[:-1]:
            raise ShapeError(f"direct_sum: mask {mask.shape} does not match rows {rows.shape}")
        rows = rows * mask[..., None]
    total = ad.tsum(rows, axis=-2)
    if mean:
        count = mask.sum(axis=-1) if mask is not None else np.full(rows.shape[:-2], rows.shape[-2])
        total = total * (1.0 / np.maximum(count, 1.0))[..., None]
    return total
