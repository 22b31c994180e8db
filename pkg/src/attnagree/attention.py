"""
Two-stage re-attention over the objects of an instance.

Object-wise attention lets every token distribute weight over the objects;
token-wise attention weighs tokens by their relevance to the final encoder
state. Mixing the per-token maps with the token weights yields one
distribution over objects and an attention-pooled object feature.

All functions accept extra leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ContractError
from .numerics import Tensor
from .params import ParamStore, Projection

NORM_TOL = 1e-6


@dataclass
class ReAttentionParams:
    token_query: Projection
    object_key: Projection
    seq_query: Projection
    state_key: Projection

    @classmethod
    def create(cls, store: ParamStore, prefix: str, d_token: int, d_object: int,
               d_state: int, d_att: int) -> "ReAttentionParams":
        return cls(
            token_query=store.projection(f"{prefix}.token_query", d_token, d_att),
            object_key=store.projection(f"{prefix}.object_key", d_object, d_att),
            seq_query=store.projection(f"{prefix}.seq_query", d_state, d_att),
            state_key=store.projection(f"{prefix}.state_key", d_state, d_att),
        )


def object_wise_attention(token_feats, object_feats, params: ReAttentionParams) -> Tensor:
    """``[..., M, N]``: row ``i`` is a softmax over objects of MLP(t_i)·MLP(o_j)."""
    token_feats, object_feats = nx.as_tensor(token_feats), nx.as_tensor(object_feats)
    if object_feats.shape[-2] == 0:
        raise ContractError("object_wise_attention: instance has no objects")
    if token_feats.shape[-2] == 0:
        raise ContractError("object_wise_attention: empty token sequence")
    q = params.token_query(token_feats)
    k = params.object_key(object_feats)
    return nx.softmax(q @ nx.swapaxes(k, -1, -2), axis=-1)


def token_wise_attention(hidden_states, final_state, params: ReAttentionParams) -> Tensor:
    """``[..., M]``: softmax over positions of MLP(h_M)·MLP(h_i)."""
    hidden_states, final_state = nx.as_tensor(hidden_states), nx.as_tensor(final_state)
    if hidden_states.shape[-2] == 0:
        raise ContractError("token_wise_attention: empty sequence")
    k = params.state_key(hidden_states)                           # [..., M, a]
    q = params.seq_query(final_state.reshape(*final_state.shape[:-1], 1,
                                             final_state.shape[-1]))  # [..., 1, a]
    logits = (k @ nx.swapaxes(q, -1, -2)).reshape(*k.shape[:-1])      # [..., M]
    return nx.softmax(logits, axis=-1)


def aggregate(token_weights, per_token_maps, object_feats) -> tuple[Tensor, Tensor]:
    """Mix per-token maps into one object distribution and pool the objects.

    Returns ``(c_o, o_hat)`` where ``c_o = sum_i w_i * map_i`` and
    ``o_hat = sum_j c_o[j] * o_j``.
    """
    w = nx.as_tensor(token_weights)
    maps = nx.as_tensor(per_token_maps)
    objs = nx.as_tensor(object_feats)
    if np.abs(w.data.sum(axis=-1) - 1.0).max() > NORM_TOL:
        raise ContractError("aggregate: token weights do not sum to 1")
    if np.abs(maps.data.sum(axis=-1) - 1.0).max() > NORM_TOL:
        raise ContractError("aggregate: per-token maps are not row-normalized")
    c_o = w.reshape(*w.shape[:-1], 1, w.shape[-1]) @ maps         # [..., 1, N]
    pooled = c_o @ objs                                           # [..., 1, d_o]
    o_hat = pooled.reshape(*pooled.shape[:-2], pooled.shape[-1])
    return c_o.reshape(*maps.shape[:-2], maps.shape[-1]), o_hat
