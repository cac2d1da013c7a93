"""Attention-pooling regression heads, one per scored trait.

A head scores every token with a learned linear projection, softmaxes the
scores over unmasked positions, and reduces the sequence to one vector as
a convex combination of token states. In ``six_metric_attention`` mode
each of the six targets owns a fully independent head, so gradients for
target j never touch head k. ``single_attention`` shares one pooling head
whose output feeds six projections, and ``mean`` replaces learned pooling
with a uniform convex combination over unmasked tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SCORE_MAX, SCORE_MIN, TARGETS, nearest_half
from .encoder import MASK_NEG, ModelSpec
from .tensor import Tensor, concat

OUT_BIAS_INIT = 3.0  # midpoint of the score range; speeds up regression


@dataclass
class AttentionPoolHead:
    """Token scorer plus output projection.

    ``score_w``/``score_b`` map each token state to one importance score;
    ``out_w``/``out_b`` map the pooled vector to one or more predictions.
    The scorer is absent in mean-pooling mode.
    """

    score_w: Tensor | None  # (d_model, 1)
    score_b: Tensor | None  # (1,)
    out_w: Tensor  # (d_model, n_out)
    out_b: Tensor  # (n_out,)


@dataclass
class HeadBank:
    """The full set of regression heads for the six targets.

    six_metric_attention: six independent heads, target j uses heads[j].
    single_attention:     one head whose out_w is (d_model, 6).
    mean:                 one scorer-less head, pooled by masked mean.
    """

    mode: str
    heads: list[AttentionPoolHead]
    target_order: tuple[str, ...] = TARGETS

    def named_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for name, head in zip(self._head_names(), self.heads):
            if head.score_w is not None:
                params[f"head.{name}.score_w"] = head.score_w
                params[f"head.{name}.score_b"] = head.score_b
            params[f"head.{name}.out_w"] = head.out_w
            params[f"head.{name}.out_b"] = head.out_b
        return params

    def _head_names(self) -> list[str]:
        if self.mode == "six_metric_attention":
            return list(self.target_order)
        return ["shared"]


def init_head_bank(spec: ModelSpec, seed) -> HeadBank:
    """Build heads for the spec's pooling mode; deterministic per seed."""
    rng = np.random.default_rng(seed)
    d = spec.d_model

    def scorer():
        return (
            Tensor(rng.normal(0.0, 0.02, size=(d, 1)), requires_grad=True),
            Tensor(np.zeros(1), requires_grad=True),
        )

    def output(n_out):
        return (
            Tensor(rng.normal(0.0, 0.02, size=(d, n_out)), requires_grad=True),
            Tensor(np.full(n_out, OUT_BIAS_INIT), requires_grad=True),
        )

    if spec.pooling_mode == "six_metric_attention":
        heads = []
        for _ in TARGETS:
            sw, sb = scorer()
            ow, ob = output(1)
            heads.append(AttentionPoolHead(sw, sb, ow, ob))
    elif spec.pooling_mode == "single_attention":
        sw, sb = scorer()
        ow, ob = output(len(TARGETS))
        heads = [AttentionPoolHead(sw, sb, ow, ob)]
    else:  # mean
        ow, ob = output(len(TARGETS))
        heads = [AttentionPoolHead(None, None, ow, ob)]
    return HeadBank(mode=spec.pooling_mode, heads=heads)


def _check_mask(mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("pooling needs at least one unmasked position")
    return mask


def pooling_weights(head: AttentionPoolHead, hidden: Tensor, mask) -> Tensor:
    """Softmax pooling weights, shape (seq_len, 1); zero on masked positions."""
    mask = _check_mask(mask)
    scores = hidden @ head.score_w + head.score_b
    scores = scores + Tensor(np.where(mask, 0.0, MASK_NEG).reshape(-1, 1))
    return scores.softmax(axis=0)


def attention_pool(head: AttentionPoolHead, hidden: Tensor, mask) -> Tensor:
    """Convex combination of token states, shape (1, d_model)."""
    alpha = pooling_weights(head, hidden, mask)
    return alpha.transpose((1, 0)) @ hidden


def masked_mean_pool(hidden: Tensor, mask) -> Tensor:
    """Uniform convex combination over unmasked tokens, shape (1, d_model).

    Implemented with the same weighted-matmul path as attention pooling so
    that a zero-scorer attention pool reproduces it bit for bit.
    """
    mask = _check_mask(mask)
    weights = np.where(mask, 1.0 / mask.sum(), 0.0).reshape(1, -1)
    return Tensor(weights) @ hidden


def predict_scores(bank: HeadBank, hidden: Tensor, mask) -> Tensor:
    """Raw regression outputs for all six targets, shape (6,)."""
    if bank.mode == "six_metric_attention":
        outs = []
        for head in bank.heads:
            pooled = attention_pool(head, hidden, mask)
            outs.append((pooled @ head.out_w + head.out_b).reshape((1,)))
        return concat(outs, axis=0)
    head = bank.heads[0]
    if bank.mode == "single_attention":
        pooled = attention_pool(head, hidden, mask)
    else:
        pooled = masked_mean_pool(hidden, mask)
    return (pooled @ head.out_w + head.out_b).reshape((len(TARGETS),))


def clamp_to_score_lattice(raw, round_to_lattice: bool = False) -> np.ndarray:
    """Clip predictions to [1, 5]; optionally snap to the 0.5 lattice.

    Lattice rounding is nearest-half (round-half-even at exact ties).
    Metric evaluation uses clipped-but-unrounded values by default.
    """
    arr = np.clip(np.asarray(raw, dtype=np.float64), SCORE_MIN, SCORE_MAX)
    if round_to_lattice:
        arr = np.clip(nearest_half(arr), SCORE_MIN, SCORE_MAX)
    return arr
