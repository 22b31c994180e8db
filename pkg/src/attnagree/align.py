"""
Agreement between the attention maps of the answering and rationale processes.

Two similarities are provided: a plain dot product, and a listwise rank
similarity that scores the smoothed ranking of one map against the hard
ranking of the other with NDCG. The alignment losses are cross-entropies
that prefer the gold (answer, rationale) pair over the negative candidates.

Functions operate on the last axis and broadcast over leading axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ContractError
from .numerics import Tensor

N_CHOICES = 4
MODES = ("none", "dot", "rank")
LN2 = math.log(2.0)


@dataclass
class AlignConfig:
    mode: str = "dot"
    alpha: float = 10.0
    lam: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"align mode must be one of {MODES}, got {self.mode!r}")
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if not self.lam >= 0:
            raise ConfigError(f"lambda must be nonnegative, got {self.lam}")
        if self.mode == "none":
            self.lam = 0.0


@dataclass
class RankVector:
    """Rank positions (1 = largest weight). ``hard`` marks exact integer ranks."""

    ranks: Tensor
    hard: bool


def sim_dot(c_p, c_t) -> Tensor:
    c_p, c_t = nx.as_tensor(c_p), nx.as_tensor(c_t)
    if c_p.shape[-1] != c_t.shape[-1]:
        raise ContractError(f"sim_dot: lengths {c_p.shape[-1]} and {c_t.shape[-1]} differ")
    return nx.tsum(c_p * c_t, axis=-1)


def hard_ranks(c) -> RankVector:
    """Exact ranks; ties go to the lower index. Carries no gradient."""
    w = nx.as_tensor(c).data
    order = np.argsort(-w, axis=-1, kind="stable")
    ranks = np.empty_like(w)
    np.put_along_axis(ranks, order, np.arange(1, w.shape[-1] + 1, dtype=np.float64)
                      * np.ones_like(w), axis=-1)
    return RankVector(Tensor(ranks), hard=True)


def approx_ranks(c, alpha: float) -> RankVector:
    """Smoothed ranks ``1 + sum_{j != i} sigmoid(-alpha (c_i - c_j))``."""
    if not alpha > 0:
        raise ContractError(f"approx_ranks: alpha must be positive, got {alpha}")
    c = nx.as_tensor(c)
    n = c.shape[-1]
    diff = c.reshape(*c.shape, 1) - c.reshape(*c.shape[:-1], 1, n)
    pair = nx.sigmoid(diff * (-alpha))
    # the diagonal contributes sigmoid(0) = 0.5 exactly
    return RankVector(nx.tsum(pair, axis=-1) + 0.5, hard=False)


def _gain(relevance) -> Tensor:
    """``2**rel - 1`` via exp2, the same evaluation the normalizer uses, so a
    matching ordering scores exactly 1."""
    rel = nx.as_tensor(relevance)
    with np.errstate(over="ignore"):
        pow2 = np.exp2(rel.data)
    return nx.record(pow2 - 1.0, (rel,), lambda g: (g * pow2 * LN2,), "gain")


def ndcg(pred: RankVector, target: RankVector) -> Tensor:
    """NDCG of ``pred`` against the hard ordering ``target``.

    Relevance of an item is ``N + 1 - rank``; gain is ``2**rel - 1`` and the
    discount is ``log(1 + target_rank)``. The normalizer is the score of
    ``target`` against itself, so matching orderings give exactly 1.
    """
    if not target.hard:
        raise ContractError("ndcg: target ranks must be hard")
    p, t = nx.as_tensor(pred.ranks), target.ranks.data
    n = p.shape[-1]
    if t.shape[-1] != n:
        raise ContractError(f"ndcg: lengths {n} and {t.shape[-1]} differ")
    disc = np.log1p(t)
    ideal = nx.tsum(_gain((n + 1.0) - t) / disc, axis=-1).data
    dcg = nx.tsum(_gain((n + 1.0) - p) / disc, axis=-1)
    return dcg / ideal


def sim_rank(c_p, c_t, alpha: float) -> Tensor:
    """Rank similarity; gradient flows through ``c_p`` only."""
    c_p, c_t = nx.as_tensor(c_p), nx.as_tensor(c_t)
    if c_p.shape[-1] != c_t.shape[-1]:
        raise ContractError(f"sim_rank: lengths {c_p.shape[-1]} and {c_t.shape[-1]} differ")
    return ndcg(approx_ranks(c_p, alpha), hard_ranks(c_t))


def similarity(c_p, c_t, cfg: AlignConfig) -> Tensor:
    if cfg.mode == "rank":
        return sim_rank(c_p, c_t, cfg.alpha)
    return sim_dot(c_p, c_t)


Similarity = Callable[[Tensor, Tensor], Tensor]


def alignment_losses(maps_qa, maps_qar, gold_a, gold_r, cfg: AlignConfig,
                     sim: Similarity | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """Listwise alignment cross-entropies.

    ``maps_qa`` and ``maps_qar`` hold one map per candidate on axis 0 (or
    axis 1 when a batch axis leads); trailing axes are whatever ``sim``
    reduces (a single map by default). The answer-side loss scores every
    answer map against the gold rationale map and asks the gold answer to
    win; the rationale side is symmetric. Returns ``(L_qa_att, L_qar_att,
    L_align)``, one value per instance when batched.
    """
    maps_qa, maps_qar = nx.as_tensor(maps_qa), nx.as_tensor(maps_qar)
    if sim is None:
        sim = lambda p, t: similarity(p, t, cfg)  # noqa: E731
    gold_a, gold_r = np.asarray(gold_a), np.asarray(gold_r)
    batched = gold_a.ndim == 1
    if not batched:
        maps_qa = maps_qa.reshape(1, *maps_qa.shape)
        maps_qar = maps_qar.reshape(1, *maps_qar.shape)
        gold_a, gold_r = gold_a.reshape(1), gold_r.reshape(1)
    for name, maps in (("answer", maps_qa), ("rationale", maps_qar)):
        if maps.ndim < 3 or maps.shape[1] != N_CHOICES:
            raise ContractError(
                f"alignment_losses: expected {N_CHOICES} {name} maps, got shape {maps.shape}")
    if (gold_a < 0).any() or (gold_a >= N_CHOICES).any() or \
            (gold_r < 0).any() or (gold_r >= N_CHOICES).any():
        raise ContractError("alignment_losses: gold index out of range")
    rows = np.arange(len(gold_a))
    gold_qa = maps_qa[rows, gold_a]
    gold_qar = maps_qar[rows, gold_r]
    s_qa = sim(maps_qa, gold_qar.reshape(gold_qar.shape[0], 1, *gold_qar.shape[1:]))
    s_qar = sim(maps_qar, gold_qa.reshape(gold_qa.shape[0], 1, *gold_qa.shape[1:]))
    l_qa = nx.cross_entropy_with_logits(s_qa, gold_a)
    l_qar = nx.cross_entropy_with_logits(s_qar, gold_r)
    l_align = l_qa + l_qar
    if not batched:
        l_qa, l_qar, l_align = (t.reshape(()) for t in (l_qa, l_qar, l_align))
    return l_qa, l_qar, l_align


def total_loss(l_qa, l_qar, l_align, lam: float) -> Tensor:
    if lam < 0:
        raise ContractError(f"total_loss: lambda must be nonnegative, got {lam}")
    return (nx.as_tensor(l_qa) + l_qar) + nx.as_tensor(l_align) * lam


def layerwise_similarity(stack_p, stack_t, cfg: AlignConfig,
                         layer_mask: np.ndarray | None = None) -> Tensor:
    """Mean over layers (axis -2) of the per-layer similarity."""
    stack_p, stack_t = nx.as_tensor(stack_p), nx.as_tensor(stack_t)
    if stack_p.shape[-2] != stack_t.shape[-2]:
        raise ContractError(
            f"layerwise alignment: layer counts {stack_p.shape[-2]} and {stack_t.shape[-2]} differ")
    per_layer = similarity(stack_p, stack_t, cfg)
    n_layers = per_layer.shape[-1]
    mask = np.ones(n_layers) if layer_mask is None else np.asarray(layer_mask, dtype=np.float64)
    if mask.shape != (n_layers,) or mask.sum() <= 0:
        raise ContractError("layerwise alignment: layer mask must select at least one layer")
    return nx.tsum(per_layer * (mask / mask.sum()), axis=-1)
