"""Linear-chain CRF: emission scores, forward algorithm, NLL and Viterbi.

A path y_1..y_n scores ``start[y_1] + sum_i s_i[y_i] + sum_i A[y_{i-1}, y_i] + stop[y_n]``.
Training runs through ``crf_nll_loss``, an autodiff op whose backward pass
uses forward-backward marginals.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tensor
from .encoder import _xavier
from .errors import ShapeError

NEG_INF = -np.inf


def init_crf(store: ParameterStore, d_out: int, n_labels: int, rng: np.random.Generator,
             prefix: str = "crf") -> None:
    store.add(f"{prefix}.Wc", _xavier(rng, d_out, n_labels).T)
    store.add(f"{prefix}.bc", np.zeros(n_labels))
    store.add(f"{prefix}.A", np.zeros((n_labels, n_labels)))
    store.add(f"{prefix}.start", np.zeros(n_labels))
    store.add(f"{prefix}.stop", np.zeros(n_labels))


def emissions(O, W_c, b_c) -> Tensor:
    O, W_c, b_c = ad.as_tensor(O), ad.as_tensor(W_c), ad.as_tensor(b_c)
    if W_c.ndim != 2 or O.shape[-1] != W_c.shape[1] or b_c.shape != (W_c.shape[0],):
        raise ShapeError(f"emissions: O {O.shape}, W_c {W_c.shape}, b_c {b_c.shape} are incompatible")
    return O @ ad.transpose(W_c) + b_c


def _lse(x: np.ndarray, axis: int) -> np.ndarray:
    top = np.max(x, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return np.squeeze(top + np.log(np.sum(np.exp(x - top), axis=axis, keepdims=True)), axis=axis)


def _check(scores: np.ndarray, transitions, start, stop):
    if scores.ndim != 2 or scores.shape[0] < 1:
        raise ShapeError(f"expected (n >= 1, L) emission scores, got {scores.shape}")
    L = scores.shape[1]
    if np.shape(transitions) != (L, L) or np.shape(start) != (L,) or np.shape(stop) != (L,):
        raise ShapeError(f"transition parameters do not match {L} labels")


def forward_table(scores, transitions, start, stop) -> tuple[np.ndarray, float]:
    scores = np.asarray(scores, dtype=np.float64)
    _check(scores, transitions, start, stop)
    alpha = np.empty_like(scores)
    alpha[0] = start + scores[0]
    for i in range(1, scores.shape[0]):
        alpha[i] = _lse(alpha[i - 1][:, None] + transitions, axis=0) + scores[i]
    return alpha, float(_lse(alpha[-1] + stop, axis=0))


def backward_table(scores, transitions, stop) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    beta = np.empty_like(scores)
    beta[-1] = stop
    for i in range(scores.shape[0] - 2, -1, -1):
        beta[i] = _lse(transitions + (scores[i + 1] + beta[i + 1])[None, :], axis=1)
    return beta


def log_partition(scores, transitions, start, stop) -> float:
    return forward_table(scores, transitions, start, stop)[1]


def path_score(scores, tags: Sequence[int], transitions, start, stop) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    tags = np.asarray(tags, dtype=np.int64)
    if tags.shape != (scores.shape[0],):
        raise ShapeError(f"tag sequence of length {tags.shape} for {scores.shape[0]} positions")
    total = start[tags[0]] + scores[np.arange(len(tags)), tags].sum() + stop[tags[-1]]
    return float(total + transitions[tags[:-1], tags[1:]].sum())


def nll(scores, gold: Sequence[int], transitions, start, stop) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 2 and scores.shape[1] == 1:
        path_score(scores, gold, transitions, start, stop)  # shape check only
        return 0.0  # a single path carries all the mass
    return log_partition(scores, transitions, start, stop) - path_score(scores, gold, transitions, start, stop)


def marginals(scores, transitions, start, stop) -> tuple[np.ndarray, np.ndarray, float]:
    """Node marginals (n, L), summed pairwise marginals (L, L) and log Z."""
    alpha, logz = forward_table(scores, transitions, start, stop)
    beta = backward_table(scores, transitions, stop)
    node = np.exp(alpha + beta - logz)
    pair = np.zeros_like(transitions, dtype=np.float64)
    for i in range(1, scores.shape[0]):
        pair += np.exp(alpha[i - 1][:, None] + transitions + (scores[i] + beta[i])[None, :] - logz)
    return node, pair, logz


def viterbi(scores, transitions, start, stop, allowed=None) -> list[int]:
    """Best path; ``allowed`` = (transition, start, stop) boolean masks or None."""
    scores = np.asarray(scores, dtype=np.float64)
    _check(scores, transitions, start, stop)
    transitions = np.asarray(transitions, dtype=np.float64)
    start = np.asarray(start, dtype=np.float64)
    stop = np.asarray(stop, dtype=np.float64)
    if allowed is not None:
        t_ok, s_ok, e_ok = allowed
        transitions = np.where(t_ok, transitions, NEG_INF)
        start = np.where(s_ok, start, NEG_INF)
        stop = np.where(e_ok, stop, NEG_INF)
    n, L = scores.shape
    delta = start + scores[0]
    back = np.zeros((n, L), dtype=np.int64)
    for i in range(1, n):
        cand = delta[:, None] + transitions
        back[i] = np.argmax(cand, axis=0)
        delta = cand[back[i], np.arange(L)] + scores[i]
    last = int(np.argmax(delta + stop))
    path = [last]
    for i in range(n - 1, 0, -1):
        last = int(back[i, last])
        path.append(last)
    return path[::-1]


def bioes_constraints(tags: Sequence[str]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Masks of allowed transitions, first tags and last tags under BIOES."""
    parsed = [("O", None) if t == "O" else tuple(t.split("-", 1)) for t in tags]
    L = len(tags)
    trans = np.zeros((L, L), dtype=bool)
    for a, (pa, ta) in enumerate(parsed):
        for b, (pb, tb) in enumerate(parsed):
            if pa in ("B", "I"):
                trans[a, b] = pb in ("I", "E") and ta == tb
            else:
                trans[a, b] = pb in ("O", "B", "S")
    first = np.array([p in ("O", "B", "S") for p, _ in parsed])
    last = np.array([p in ("O", "E", "S") for p, _ in parsed])
    return trans, first, last


def crf_nll_loss(scores: Tensor, transitions: Tensor, start: Tensor, stop: Tensor,
                 gold: np.ndarray, lengths: Sequence[int]) -> Tensor:
    """Summed NLL over a padded batch; ``scores`` is (batch, n_max, L), ``gold`` (batch, n_max)."""
    scores = ad.as_tensor(scores)
    gold = np.asarray(gold, dtype=np.int64)
    B, _, L = scores.shape
    if gold.shape != scores.shape[:2] or len(lengths) != B:
        raise ShapeError(f"crf_nll_loss: gold {gold.shape} / lengths {len(lengths)} do not match {scores.shape}")
    A, s0, sn = transitions.data, start.data, stop.data
    total = 0.0
    d_scores = np.zeros_like(scores.data)
    d_A = np.zeros_like(A)
    d_start = np.zeros_like(s0)
    d_stop = np.zeros_like(sn)
    for b in range(B):
        n = int(lengths[b])
        em = scores.data[b, :n]
        y = gold[b, :n]
        node, pair, logz = marginals(em, A, s0, sn)
        total += logz - path_score(em, y, A, s0, sn)
        d_scores[b, :n] = node
        d_scores[b, np.arange(n), y] -= 1.0
        d_A += pair
        np.add.at(d_A, (y[:-1], y[1:]), -1.0)
        d_start += node[0]
        d_start[y[0]] -= 1.0
        d_stop += node[n - 1]
        d_stop[y[-1]] -= 1.0

    def bw(g):
        return g * d_scores, g * d_A, g * d_start, g * d_stop

    return ad.custom_op((scores, transitions, start, stop), np.array(total), bw, "crf_nll")
