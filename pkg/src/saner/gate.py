"""Gated fusion of context and augmented vectors, and the output projection."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .encoder import _xavier
from .errors import ShapeError


class FusedVector(NamedTuple):
    u: Tensor
    g: Tensor


def init_gate(store: ParameterStore, d: int, rng: np.random.Generator, prefix: str = "gate") -> None:
    # stored as (out, in) so that g = sigmoid(W_1 h + W_2 v + b_g) reads literally
    store.add(f"{prefix}.W1", _xavier(rng, d, d).T)
    store.add(f"{prefix}.W2", _xavier(rng, d, d).T)
    store.add(f"{prefix}.b", np.zeros(d))


def init_projection(store: ParameterStore, d: int, d_out: int, rng: np.random.Generator,
                    name: str = "output.Wu") -> None:
    store.add(name, _xavier(rng, 2 * d, d_out).T)


def fuse(h, v, params: ParameterStore, force_gate=None, prefix: str = "gate") -> FusedVector:
    """g = sigmoid(W_1 h + W_2 v + b_g); u = [g * h] ++ [(1 - g) * v].

    ``force_gate`` replaces g by a constant (scalar or array) for testing.
    """
    h, v = ad.as_tensor(h), ad.as_tensor(v)
    if h.shape != v.shape:
        raise ShapeError(f"fuse: h {h.shape} and v {v.shape} differ")
    if force_gate is None:
        W1, W2, b = params[f"{prefix}.W1"], params[f"{prefix}.W2"], params[f"{prefix}.b"]
        if W1.shape != (h.shape[-1], h.shape[-1]):
            raise ShapeError(f"fuse: gate matrices {W1.shape} do not match width {h.shape[-1]}")
        g = ad.sigmoid(h @ ad.transpose(W1) + v @ ad.transpose(W2) + b)
    else:
        g = ad.Tensor(np.broadcast_to(np.asarray(force_gate, dtype=np.float64), h.shape).copy())
    return FusedVector(ad.concat([g * h, (1.0 - g) * v], axis=-1), g)


def no_gate_fuse(h, v) -> FusedVector:
    h, v = ad.as_tensor(h), ad.as_tensor(v)
    if h.shape != v.shape:
        raise ShapeError(f"no_gate_fuse: h {h.shape} and v {v.shape} differ")
    return FusedVector(ad.concat([h, v], axis=-1), ad.Tensor(np.ones(h.shape)))


def project(u, W_u) -> Tensor:
    u, W_u = ad.as_tensor(u), ad.as_tensor(W_u)
    if W_u.ndim != 2 or u.shape[-1] != W_u.shape[1]:
        raise ShapeError(f"project: u {u.shape} does not match W_u {W_u.shape}")
    return u @ ad.transpose(W_u)
