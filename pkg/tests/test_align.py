import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from attnagree import numerics as nx
from attnagree.align import (AlignConfig, RankVector, alignment_losses, approx_ranks,
                             hard_ranks, layerwise_similarity, ndcg, sim_dot, sim_rank,
                             total_loss)
from attnagree.errors import ConfigError, ContractError
from attnagree.numerics import Tensor


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def ndcg_oracle(pred, target, log=math.log):
    """Direct evaluation with relevance ``N + 1 - rank`` and gain ``2**rel - 1``."""
    n = len(pred)
    num = sum((2.0 ** (n + 1 - p) - 1) / log(1 + t) for p, t in zip(pred, target))
    den = sum((2.0 ** (n + 1 - t) - 1) / log(1 + t) for t in target)
    return num / den


def hard(ranks):
    return RankVector(Tensor(np.asarray(ranks, dtype=np.float64)), hard=True)


def one_hot(i, n=4):
    v = np.zeros(n)
    v[i] = 1.0
    return v


# ---------------------------------------------------------------- similarities


def test_sim_dot_examples():
    assert sim_dot(one_hot(2), one_hot(2)).item() == 1.0
    assert sim_dot(one_hot(1), one_hot(3)).item() == 0.0
    assert sim_dot(np.full(4, 0.25), np.full(4, 0.25)).item() == 0.25


def test_sim_dot_length_mismatch():
    with pytest.raises(ContractError):
        sim_dot(np.ones(3) / 3, np.ones(4) / 4)


@given(hnp.arrays(np.float64, st.integers(1, 8), elements=st.floats(0, 1)),
       st.randoms(use_true_random=False))
def test_sim_dot_is_symmetric(a, r):
    b = np.array([r.random() for _ in a])
    assert sim_dot(a, b).item() == sim_dot(b, a).item()


def test_hard_rank_examples():
    assert hard_ranks([0.5, 0.3, 0.2]).ranks.data.tolist() == [1, 2, 3]
    assert hard_ranks([0.2, 0.3, 0.5]).ranks.data.tolist() == [3, 2, 1]
    assert hard_ranks([0.4, 0.4, 0.2]).ranks.data.tolist() == [1, 2, 3]


def hard_rank_oracle(w):
    order = sorted(range(len(w)), key=lambda i: (-w[i], i))
    ranks = [0] * len(w)
    for pos, i in enumerate(order, start=1):
        ranks[i] = pos
    return ranks


@given(st.lists(st.sampled_from([0.1, 0.2, 0.3, 0.4]), min_size=1, max_size=8))
def test_hard_ranks_match_stable_sort_oracle(w):
    assert hard_ranks(w).ranks.data.tolist() == hard_rank_oracle(w)


def test_approx_rank_examples():
    assert np.allclose(approx_ranks(np.full(4, 0.25), 10.0).ranks.data, 2.5, atol=1e-15)
    got = approx_ranks([0.5, 0.3, 0.2], 10.0).ranks.data[0]
    assert abs(got - (1 + sigmoid(-2) + sigmoid(-3))) < 1e-12
    assert round(got, 4) == 1.1666
    assert np.round(approx_ranks([0.5, 0.3, 0.2], 1000.0).ranks.data).tolist() == [1, 2, 3]


def test_approx_ranks_needs_positive_alpha():
    with pytest.raises(ContractError):
        approx_ranks([0.5, 0.5], 0.0)


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.float64, st.integers(1, 10), elements=st.floats(0, 1)),
       st.floats(0.01, 1e4))
def test_approx_ranks_sum_and_range(c, alpha):
    r = approx_ranks(c, alpha).ranks.data
    n = len(c)
    assert abs(r.sum() - n * (n + 1) / 2) < 1e-9
    assert np.all(r >= 1.0) and np.all(r <= n)


def test_approx_ranks_round_to_hard_ranks_when_gaps_are_wide():
    rng = np.random.default_rng(0)
    done = 0
    while done < 100:
        n = int(rng.integers(2, 7))
        w = rng.dirichlet(np.ones(n))
        gaps = np.abs(w[:, None] - w[None, :])[~np.eye(n, dtype=bool)]
        if gaps.min() < 0.05:
            continue
        smooth = np.round(approx_ranks(w, 1000.0).ranks.data)
        assert np.array_equal(smooth, hard_ranks(w).ranks.data)
        done += 1


# ---------------------------------------------------------------- NDCG


def test_ndcg_examples():
    assert ndcg(hard([1, 2, 3]), hard([1, 2, 3])).item() == 1.0
    got = ndcg(hard([2, 1, 3]), hard([1, 2, 3])).item()
    assert abs(got - ndcg_oracle([2, 1, 3], [1, 2, 3])) < 1e-12
    assert round(got, 4) == 0.8428


def test_ndcg_is_log_base_invariant():
    for pred in itertools.permutations([1, 2, 3, 4]):
        a = ndcg_oracle(pred, [2, 4, 1, 3])
        b = ndcg_oracle(pred, [2, 4, 1, 3], log=math.log2)
        assert abs(a - b) < 1e-12
        assert abs(ndcg(hard(pred), hard([2, 4, 1, 3])).item() - a) < 1e-12


def test_ndcg_contracts():
    with pytest.raises(ContractError):
        ndcg(hard([1, 2]), hard([1, 2, 3]))
    with pytest.raises(ContractError):
        ndcg(hard([1, 2]), approx_ranks([0.6, 0.4], 10.0))


@pytest.mark.parametrize("n", range(1, 7))
def test_ndcg_brute_force_all_permutation_pairs(n):
    perms = np.array(list(itertools.permutations(range(1, n + 1))), dtype=np.float64)
    p = len(perms)
    scores = ndcg(hard(perms[:, None, :] * np.ones((1, p, 1))),
                  hard(perms[None, :, :] * np.ones((p, 1, 1)))).data
    same = np.eye(p, dtype=bool)
    assert np.all(scores[same] == 1.0)
    if p > 1:
        assert scores[~same].max() < 1.0 - 1e-6
    assert scores.min() > 0.0


def test_sim_rank_examples():
    c = np.array([0.1, 0.6, 0.3])
    assert abs(sim_rank(c, c, 1000.0).item() - 1.0) < 1e-3
    assert sim_rank([1.0], [1.0], 10.0).item() == pytest.approx(1.0, abs=1e-15)
    # over every reordering of the prediction, the matching order scores highest
    values = {perm: sim_rank(c[list(perm)], c, 10.0).item()
              for perm in itertools.permutations(range(3))}
    best = values.pop((0, 1, 2))
    assert all(v < best for v in values.values())
    assert sim_rank(c[::-1], c, 10.0).item() < best


# ---------------------------------------------------------------- losses


def test_identical_maps_give_log4():
    maps = np.tile(np.array([0.1, 0.2, 0.3, 0.4]), (4, 1))
    for mode in ("dot", "rank"):
        outs = alignment_losses(maps, maps, 1, 2, AlignConfig(mode=mode))
        for t in outs[:2]:
            assert abs(t.item() - math.log(4)) < 1e-12
        assert abs(outs[2].item() - 2 * math.log(4)) < 1e-12


def test_one_hot_gold_pair_example():
    maps = np.eye(4)
    l_qa, l_qar, l_align = alignment_losses(maps, maps, 0, 0, AlignConfig(mode="dot"))
    ref = -math.log(math.e / (math.e + 3.0))
    assert abs(l_qa.item() - ref) < 1e-12 and round(ref, 4) == 0.7437
    assert abs(l_align.item() - 2 * ref) < 1e-12
    assert l_qa.item() < math.log(4)


def test_losses_nonnegative_and_batched_rows_match_single():
    rng = np.random.default_rng(1)
    qa, qar = rng.dirichlet(np.ones(5), size=(3, 4)), rng.dirichlet(np.ones(5), size=(3, 4))
    ga, gr = np.array([0, 3, 1]), np.array([2, 2, 0])
    for mode in ("dot", "rank"):
        cfg = AlignConfig(mode=mode)
        batched = alignment_losses(qa, qar, ga, gr, cfg)
        for b in range(3):
            single = alignment_losses(qa[b], qar[b], ga[b], gr[b], cfg)
            for x, y in zip(batched, single):
                assert x.data[b] >= 0 and abs(x.data[b] - y.item()) < 1e-14


def test_alignment_loss_contracts():
    cfg = AlignConfig()
    with pytest.raises(ContractError):
        alignment_losses(np.eye(3), np.eye(3), 0, 0, cfg)
    with pytest.raises(ContractError):
        alignment_losses(np.eye(4), np.eye(4), 4, 0, cfg)


def test_rank_mode_sends_no_gradient_to_targets():
    rng = np.random.default_rng(2)
    qa = Tensor(rng.dirichlet(np.ones(5), size=4), requires_grad=True)
    qar = Tensor(rng.dirichlet(np.ones(5), size=4), requires_grad=True)
    l_qa, _, _ = alignment_losses(qa, qar, 1, 3, AlignConfig(mode="rank"))
    nx.backward(l_qa)
    assert not np.any(qar.grad) and np.any(qa.grad)
    l_qa, _, _ = alignment_losses(qa, qar, 1, 3, AlignConfig(mode="dot"))
    nx.backward(l_qa)
    assert np.any(qar.grad) and np.any(qa.grad)


@pytest.mark.parametrize("mode", ["dot", "rank"])
def test_alignment_gradient_through_map_construction(mode):
    from attnagree.attention import ReAttentionParams, aggregate, object_wise_attention
    from attnagree.params import ParamStore

    rng = np.random.default_rng(3)
    p = ReAttentionParams.create(ParamStore(4), "r", 3, 5, 6, 4)
    tokens = rng.normal(size=(2, 4, 3, 3))   # process, candidate, token, d_t
    weights = rng.dirichlet(np.ones(3), size=(2, 4))
    objects = rng.normal(size=(5, 5))

    def loss(objs):
        maps, _ = aggregate(weights, object_wise_attention(tokens, objs, p), objs)
        _, _, l_align = alignment_losses(maps[0], maps[1], 2, 1, AlignConfig(mode=mode))
        return l_align

    assert nx.finite_diff_check(loss, objects) < 1e-4


def test_total_loss_examples():
    assert total_loss(1.0, 2.0, 0.5, 1.0).item() == 3.5
    l_qa, l_qar = Tensor(0.7), Tensor(1.9)
    assert total_loss(l_qa, l_qar, 123.0, 0.0).item() == (l_qa + l_qar).item()
    with pytest.raises(ContractError):
        total_loss(1.0, 1.0, 1.0, -0.1)


def test_align_config_validation():
    assert AlignConfig(mode="none", lam=3.0).lam == 0.0
    for bad in ({"mode": "cosine"}, {"alpha": 0.0}, {"lam": -1.0}):
        with pytest.raises(ConfigError):
            AlignConfig(**bad)


def test_layerwise_similarity_examples():
    cfg = AlignConfig(mode="dot")
    a = np.stack([one_hot(0), one_hot(1)])
    assert layerwise_similarity(a, a, cfg).item() == 1.0
    b = np.stack([one_hot(0), one_hot(2)])
    assert layerwise_similarity(a, b, cfg).item() == 0.5
    rng = np.random.default_rng(4)
    p, t = rng.dirichlet(np.ones(6), size=3), rng.dirichlet(np.ones(6), size=3)
    ref = np.mean([p[i] @ t[i] for i in range(3)])
    assert abs(layerwise_similarity(p, t, cfg).item() - ref) < 1e-12
    with pytest.raises(ContractError):
        layerwise_similarity(p, t[:2], cfg)
