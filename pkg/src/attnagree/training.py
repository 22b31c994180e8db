"""The joint objective and one optimization step."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .align import AlignConfig, alignment_losses, total_loss
from .errors import ContractError, NumericError
from .model import BatchOutput, GistModel
from .optim import AdamState, adam_step
from .synth import Instance


@dataclass
class LossParts:
    total: nx.Tensor
    qa: float
    qar: float
    align: float
    output: BatchOutput


def gist_loss(model: GistModel, batch: Sequence[Instance], cfg: AlignConfig) -> LossParts:
    """Mean over the batch of ``L_qa + L_qar + lambda * L_align``.

    With mode ``"none"`` the alignment term is left out of the graph and its
    dot-product value is reported for reference only.
    """
    if not batch:
        raise ContractError("empty batch")
    out = model.forward_batch(batch)
    gold_a = np.array([inst.answer_label for inst in batch])
    gold_r = np.array([inst.rationale_label for inst in batch])
    l_qa = nx.cross_entropy_with_logits(out.qa_logits, gold_a).mean()
    l_qar = nx.cross_entropy_with_logits(out.qar_logits, gold_r).mean()
    if cfg.mode == "none":
        with nx.no_grad():
            _, _, l_align = alignment_losses(out.qa_maps, out.qar_maps, gold_a, gold_r,
                                             AlignConfig("dot", cfg.alpha, 0.0),
                                             model.align_similarity(AlignConfig("dot")))
        total = l_qa + l_qar
    else:
        _, _, l_align = alignment_losses(out.qa_maps, out.qar_maps, gold_a, gold_r, cfg,
                                         model.align_similarity(cfg))
        l_align = l_align.mean()
        total = total_loss(l_qa, l_qar, l_align, cfg.lam)
    align_value = float(np.mean(l_align.data))
    if not np.isfinite(total.data).all():
        raise NumericError("non-finite training loss")
    return LossParts(total, l_qa.item(), l_qar.item(), align_value, out)


def training_step(model: GistModel, batch: Sequence[Instance], cfg: AlignConfig,
                  state: AdamState, lr: float) -> LossParts:
    """Forward, backward and one Adam update of ``model.params`` in place."""
    parts = gist_loss(model, batch, cfg)
    for p in model.params.values():
        p.grad = None
    nx.backward(parts.total)
    grads = {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
             for name, p in model.params.items()}
    adam_step(model.params, grads, state, lr)
    return parts
