"""
Finite-difference checks for every differentiable op and for the joint loss.

Each op case is reduced to a scalar by a fixed random weighting of its
output and checked at several random points. The model checks perturb
parameters of a tiny vanilla and a tiny transformer model; a coordinate
sample covers every parameter tensor at least once.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import numerics as nx
from .align import AlignConfig, alignment_losses, approx_ranks, hard_ranks, ndcg, sim_dot, sim_rank
from .attention import ReAttentionParams, aggregate, object_wise_attention, token_wise_attention
from .numerics import Tensor
from .params import ParamStore
from .synth import GenConfig, generate
from .training import gist_loss
from .transformer import (BlockParams, TransformerConfig, TransformerModel,
                          extract_cls_visual_attention, multi_head_self_attention,
                          transformer_block)
from .vanilla import GRUParams, VanillaConfig, VanillaModel, gru_sequence

TOLERANCE = 1e-4
STEP = 1e-5


@dataclass
class CheckResult:
    name: str
    worst: float
    where: str = ""

    @property
    def passed(self) -> bool:
        return self.worst < TOLERANCE


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return nx.tsum(out * w)


def _simplex(rng, shape):
    x = rng.uniform(0.05, 1.0, size=shape)
    return x / x.sum(axis=-1, keepdims=True)


def _op_cases(rng: np.random.Generator) -> list[tuple[str, Callable[[Tensor], Tensor], np.ndarray]]:
    """One ``(name, scalar function of x, x)`` triple per op for one random point."""
    n = rng.normal
    a, b = n(size=(3, 4)), n(size=(3, 4))
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    M, N, d = 3, 5, 4
    store = ParamStore(int(rng.integers(1 << 31)))
    reatt = ReAttentionParams.create(store, "r", d, d, 2 * d, d)
    gru = GRUParams.create(store, "g", d, d)
    block = BlockParams.create(store, "t", 8, 16, 2)
    for p in (block.ln1_gain, block.ln2_gain):
        p.data[:] = rng.uniform(0.5, 1.5, size=p.shape)
    tok, obj, states = n(size=(M, d)), n(size=(N, d)), n(size=(M, 2 * d))
    w_mn, w_m = n(size=(M, N)), n(size=M)
    c_t = _simplex(rng, (M,))
    rows = _simplex(rng, (M, N))
    maps4 = _simplex(rng, (2, 4, N))
    gold = rng.integers(0, 4, size=2)
    gold_r = rng.integers(0, 4, size=2)
    target = hard_ranks(_simplex(rng, (N,)))
    seq = n(size=(2, 4, d))
    x8 = n(size=(2, 5, 8))
    attn = [nx.softmax(n(size=(2, 2, 6, 6)), axis=-1).data for _ in range(2)]
    ln_g, ln_s = rng.uniform(0.5, 1.5, size=4), n(size=4)
    w34, w43, w3, w12 = n(size=(3, 4)), n(size=(4, 3)), n(size=3), n(size=12)
    w_seq, w_d = n(size=(2, 4, d)), n(size=d)

    return [
        ("add", lambda x: _weighted(x + b, w34), a),
        ("add_broadcast", lambda x: _weighted(nx.as_tensor(a) + x, w34), n(size=4)),
        ("sub", lambda x: _weighted(nx.as_tensor(b) - x, w34), a),
        ("mul", lambda x: _weighted(x * b, w34), a),
        ("div_numerator", lambda x: _weighted(x / pos, w34), a),
        ("div_denominator", lambda x: _weighted(nx.as_tensor(a) / x, w34), pos),
        ("neg", lambda x: _weighted(-x, w34), a),
        ("exp", lambda x: _weighted(nx.exp(x), w34), a),
        ("log", lambda x: _weighted(nx.log(x), w34), pos),
        ("sigmoid", lambda x: _weighted(nx.sigmoid(x), w34), a),
        ("tanh", lambda x: _weighted(nx.tanh(x), w34), a),
        ("leaky_relu", lambda x: _weighted(nx.leaky_relu(x), w34), a),
        ("matmul_left", lambda x: _weighted(x @ w43, w34[:, :3]), a),
        ("matmul_right", lambda x: _weighted(nx.as_tensor(a) @ x, w34[:, :3]), w43),
        ("matmul_batched", lambda x: _weighted(x @ nx.swapaxes(x, -1, -2), 1.0), seq),
        ("sum_axis", lambda x: _weighted(nx.tsum(x, axis=0), w34[0]), a),
        ("mean", lambda x: _weighted(nx.mean(x, axis=1, keepdims=True), w3[:, None]), a),
        ("reshape", lambda x: _weighted(x.reshape(12), w12), a),
        ("transpose", lambda x: _weighted(x.transpose(), w43), a),
        ("getitem_basic", lambda x: _weighted(x[1:, ::2], w34[:2, :2]), a),
        ("getitem_advanced", lambda x: _weighted(x[[0, 2, 0]], w34), a),
        ("concat", lambda x: _weighted(nx.concat([x, x * 2.0], axis=1),
                                       np.concatenate([w34, w34[::-1]], axis=1)), a),
        ("stack", lambda x: _weighted(nx.stack([x, nx.exp(x)], axis=0),
                                      np.stack([w34, -w34])), a),
        ("softmax", lambda x: _weighted(nx.softmax(x, axis=-1), w34), a),
        ("log_softmax", lambda x: _weighted(nx.log_softmax(x, axis=0), w34), a),
        ("cross_entropy", lambda x: nx.tsum(nx.cross_entropy_with_logits(x, [1, 3, 0])), a),
        ("layer_norm", lambda x: _weighted(nx.layer_norm(x, ln_g, ln_s), w34), a),
        ("layer_norm_gain", lambda x: _weighted(nx.layer_norm(a, x, ln_s), w34), ln_g),
        ("gru_sequence", lambda x: _weighted(gru_sequence(x, gru), w_seq), seq),
        ("gru_sequence_reverse", lambda x: _weighted(gru_sequence(x, gru, reverse=True), w_seq),
         seq),
        ("object_wise_attention", lambda x: _weighted(object_wise_attention(x, obj, reatt), w_mn),
         tok),
        ("object_wise_attention_keys",
         lambda x: _weighted(object_wise_attention(tok, x, reatt), w_mn), obj),
        ("token_wise_attention",
         lambda x: _weighted(token_wise_attention(x, x[-1], reatt), w_m), states),
        ("aggregate_map", lambda x: _weighted(aggregate(c_t, nx.softmax(x), obj)[0], w_mn[0]),
         w_mn),
        ("aggregate_feature", lambda x: _weighted(aggregate(c_t, rows, x)[1], w_d),
         obj),
        ("sim_dot", lambda x: sim_dot(nx.softmax(x), rows[0]), w_mn[0]),
        ("approx_ranks", lambda x: _weighted(approx_ranks(nx.softmax(x), 10.0).ranks, w_mn[0]),
         w_mn[0]),
        ("ndcg", lambda x: ndcg(approx_ranks(nx.softmax(x), 10.0), target), w_mn[0]),
        ("sim_rank", lambda x: sim_rank(nx.softmax(x), rows[0], 10.0), w_mn[0]),
        ("alignment_dot", lambda x: nx.tsum(alignment_losses(
            nx.softmax(x), maps4, gold, gold_r, AlignConfig("dot"))[2]), n(size=(2, 4, N))),
        ("alignment_rank", lambda x: nx.tsum(alignment_losses(
            nx.softmax(x), maps4, gold, gold_r, AlignConfig("rank"))[2]), n(size=(2, 4, N))),
        ("multi_head_self_attention",
         lambda x: _weighted(multi_head_self_attention(x, block)[0], 1.0 / (1.0 + np.arange(8))),
         x8),
        ("transformer_block",
         lambda x: _weighted(transformer_block(x, block)[0], np.linspace(-1, 1, 8)), x8),
        ("extract_cls_visual_attention",
         lambda x: _weighted(extract_cls_visual_attention(
             [nx.softmax(x, axis=-1), attn[1]], [3, 4]), np.array([1.0, -2.0])),
         n(size=(2, 2, 6, 6))),
    ]


def op_suite(points: int = 10, seed: int = 0) -> list[CheckResult]:
    """Worst relative error per op over ``points`` random points."""
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}
    for _ in range(points):
        for name, f, x in _op_cases(rng):
            err = nx.finite_diff_check(f, x, h=STEP)
            worst[name] = max(worst.get(name, 0.0), err)
    return [CheckResult(k, v) for k, v in worst.items()]


def tiny_model(variant: str, seed: int = 0):
    if variant == "vanilla":
        return VanillaModel(VanillaConfig(d_token=4, d_object=4, d_hidden=4, d_att=4,
                                          d_classifier=4), seed=seed)
    if variant == "transformer":
        return TransformerModel(TransformerConfig(n_layers=1, n_heads=2, d_model=8, d_ff=16),
                                seed=seed)
    raise ValueError(f"unknown variant {variant!r}")


def sample_coords(params, rng: np.random.Generator, extra: int) -> list[tuple[str, int]]:
    """One random coordinate from every tensor plus ``extra`` more drawn at random."""
    names = sorted(params)
    coords = [(k, int(rng.integers(params[k].data.size))) for k in names]
    sizes = np.array([params[k].data.size for k in names], dtype=float)
    for k in rng.choice(len(names), size=extra, p=sizes / sizes.sum()):
        coords.append((names[k], int(rng.integers(params[names[k]].data.size))))
    return coords


def random_point(variant: str, k: int, seed: int = 0):
    """Model with every parameter drawn from U(-1, 1), a generated instance and
    an alignment config; points alternate between dot and rank alignment."""
    point_seed = seed * 1000 + k
    model = tiny_model(variant, seed=point_seed)
    rng = np.random.default_rng(point_seed)
    for name in model.params.names():
        p = model.params[name]
        p.data[...] = rng.uniform(-1.0, 1.0, size=p.shape)
    inst = generate(GenConfig(seed=point_seed, count=1, n_objects=4 + k % 3))[0]
    cfg = AlignConfig("dot" if k % 2 == 0 else "rank", 10.0, 1.0)
    return model, inst, cfg


def joint_loss_of_features(model, inst, cfg: AlignConfig) -> Callable[[Tensor], Tensor]:
    """The joint loss of one instance as a function of its object features."""

    def f(x: Tensor) -> Tensor:
        return gist_loss(model, [replace(inst, objects=x)], cfg).total

    return f


def model_suite(variant: str, points: int = 10, seed: int = 0) -> CheckResult:
    """Worst error of the joint loss with respect to the object features over
    ``points`` random models and instances. Every layer sits between the
    features and the loss, so this exercises the whole backward chain."""
    worst = 0.0
    for k in range(points):
        model, inst, cfg = random_point(variant, k, seed)
        err = nx.finite_diff_check(joint_loss_of_features(model, inst, cfg), inst.objects,
                                   h=STEP)
        worst = max(worst, err)
    return CheckResult(f"joint_loss_{variant}", worst, "objects")


def param_suite(variant: str, points: int = 10, seed: int = 0, extra: int = 40,
                atol: float = 1e-9) -> CheckResult:
    """Worst error of the joint loss with respect to a sample of parameter coordinates.

    Some parameter gradients vanish exactly (a shift shared by all candidate
    logits, say); there the central difference returns rounding noise of
    order ``ulp(loss) / h``, so differences below ``atol`` are accepted.
    """
    rng = np.random.default_rng(seed)
    worst, where = 0.0, ""
    for k in range(points):
        model, inst, cfg = random_point(variant, k, seed)
        err, name = nx.param_grad_check(lambda: gist_loss(model, [inst], cfg).total,
                                        model.params, h=STEP,
                                        coords=sample_coords(model.params, rng, extra),
                                        atol=atol)
        if err > worst:
            worst, where = err, name
    return CheckResult(f"joint_loss_params_{variant}", worst, where)


def run_suite(variants=("vanilla", "transformer"), points: int = 10, seed: int = 0
              ) -> list[CheckResult]:
    results = op_suite(points, seed)
    for v in variants:
        results.append(model_suite(v, points, seed))
    return results
