"""
Recurrent attention model scoring answer and rationale candidates.

A candidate is scored by concatenating the query and candidate tokens with
a separator, embedding every token next to a visual vector (the tagged
object's projected feature, or the mean of all objects for plain tokens),
running a bidirectional GRU, re-attending over the objects, and feeding the
final state together with the pooled object feature to a two-layer
classifier.

The answering (``"qa"``) and rationale (``"qar"``) processes share the
token table and the visual projection; everything else is per process.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .attention import ReAttentionParams, aggregate, object_wise_attention, token_wise_attention
from .errors import DataError
from .model import PROCESSES, CandidateScore, GistModel
from .numerics import Tensor
from .params import Linear, ParamStore
from .synth import FEATURE_DIM, SEP, TAG_BASE, VOCAB_SIZE, Instance


@dataclass
class VanillaConfig:
    d_token: int = 32
    d_object: int = 32
    d_hidden: int = 32
    d_att: int = 32
    d_classifier: int = 32
    vocab_size: int = VOCAB_SIZE
    feature_dim: int = FEATURE_DIM


@dataclass
class GRUParams:
    W_ir: Linear
    W_iz: Linear
    W_in: Linear
    W_hr: Linear
    W_hz: Linear
    W_hn: Linear

    @classmethod
    def create(cls, store: ParamStore, prefix: str, d_in: int, d_h: int) -> "GRUParams":
        return cls(**{
            name: store.linear(f"{prefix}.{name}", d_in if name[2] == "i" else d_h, d_h)
            for name in ("W_ir", "W_iz", "W_in", "W_hr", "W_hz", "W_hn")
        })


def gru_sequence(x, p: GRUParams, reverse: bool = False) -> Tensor:
    """States ``[S, M, h]`` of a GRU over ``x`` ([S, M, d_in]) from a zero state.

    Gates follow ``r = sig(W_ir x + W_hr h)``, ``z = sig(W_iz x + W_hz h)``,
    ``n = tanh(W_in x + r * (W_hn h))``, ``h' = (1 - z) n + z h`` (biases
    omitted). With ``reverse`` the sequence is read right to left and state
    ``t`` is the one after consuming position ``t``.

    Recorded as one tape node; the backward pass is truncation-free BPTT.
    """
    x = nx.as_tensor(x)
    S, M, _ = x.shape
    lins = (p.W_ir, p.W_iz, p.W_in, p.W_hr, p.W_hz, p.W_hn)
    h_dim = p.W_hr.W.shape[1]
    Wi = np.concatenate([l.W.data for l in lins[:3]], axis=1)
    bi = np.concatenate([l.b.data for l in lins[:3]])
    Wh = np.concatenate([l.W.data for l in lins[3:]], axis=1)
    bh = np.concatenate([l.b.data for l in lins[3:]])
    # time-major copies keep every per-step slice contiguous
    xi = np.ascontiguousarray(np.swapaxes(x.data @ Wi + bi, 0, 1))  # [M, S, 3h]
    steps = list(range(M - 1, -1, -1)) if reverse else list(range(M))
    H = h_dim

    states = np.empty((M, S, H))
    prev = np.empty((M, S, H))
    gates = np.empty((M, 4, S, H))                        # r, z, n, W_hn h
    h = np.zeros((S, H))
    for t in steps:
        hh = h @ Wh + bh
        xt = xi[t]
        r = nx.sigmoid_array(xt[:, :H] + hh[:, :H])
        z = nx.sigmoid_array(xt[:, H:2 * H] + hh[:, H:2 * H])
        hn = hh[:, 2 * H:]
        n = np.tanh(xt[:, 2 * H:] + r * hn)
        prev[t] = h
        h = n + z * (h - n)
        states[t] = h
        gates[t, 0], gates[t, 1], gates[t, 2], gates[t, 3] = r, z, n, hn

    def vjp(g):
        g = np.swapaxes(g, 0, 1)
        d_ai = np.empty((M, S, 3 * H))
        d_ah = np.empty((M, S, 3 * H))
        carry = np.zeros((S, H))
        WhT = np.ascontiguousarray(Wh.T)
        for t in reversed(steps):
            r, z, n, hn = gates[t]
            dh = g[t] + carry
            da_n = dh * (1.0 - z) * (1.0 - n * n)
            da_r = da_n * hn * r * (1.0 - r)
            da_z = dh * (prev[t] - n) * z * (1.0 - z)
            ai, ah = d_ai[t], d_ah[t]
            ai[:, :H] = da_r
            ai[:, H:2 * H] = da_z
            ai[:, 2 * H:] = da_n
            ah[:, :2 * H] = ai[:, :2 * H]
            ah[:, 2 * H:] = da_n * r
            carry = dh * z + ah @ WhT
        x2 = np.swapaxes(x.data, 0, 1).reshape(-1, x.shape[-1])
        p2 = prev.reshape(-1, H)
        ai2 = d_ai.reshape(-1, 3 * H)
        ah2 = d_ah.reshape(-1, 3 * H)
        dWi, dbi = x2.T @ ai2, ai2.sum(axis=0)
        dWh, dbh = p2.T @ ah2, ah2.sum(axis=0)
        grads = [np.swapaxes(d_ai @ Wi.T, 0, 1)]
        for dW, db in ((dWi, dbi), (dWh, dbh)):
            for k in range(3):
                cols = slice(k * H, (k + 1) * H)
                grads += [dW[:, cols], db[cols]]
        return grads

    parents = [x] + [t for l in lins for t in (l.W, l.b)]
    return nx.record(np.swapaxes(states, 0, 1), parents, vjp, "gru")


class VanillaModel(GistModel):
    variant = "vanilla"

    def __init__(self, config: VanillaConfig | None = None, seed: int = 0):
        self.config = cfg = config or VanillaConfig()
        self.seed = seed
        store = self.params = ParamStore(seed)
        self.embed = store.table("shared.embed", cfg.vocab_size, cfg.d_token)
        self.visual = store.linear("shared.visual", cfg.feature_dim, cfg.d_object)
        d_in = cfg.d_token + cfg.d_object
        d_state = 2 * cfg.d_hidden
        self.heads = {}
        for proc in PROCESSES:
            self.heads[proc] = {
                "gru_fwd": GRUParams.create(store, f"{proc}.gru_fwd", d_in, cfg.d_hidden),
                "gru_bwd": GRUParams.create(store, f"{proc}.gru_bwd", d_in, cfg.d_hidden),
                "reatt": ReAttentionParams.create(store, f"{proc}.reatt", cfg.d_token,
                                                  cfg.d_object, d_state, cfg.d_att),
                "W0": store.linear(f"{proc}.cls0", d_state + cfg.d_object, cfg.d_classifier),
                "W1": store.linear(f"{proc}.cls1", cfg.d_classifier, 1),
            }

    def config_dict(self) -> dict:
        return asdict(self.config)

    # ------------------------------------------------------------ pieces

    def project_objects(self, object_feats) -> Tensor:
        return self.visual(nx.as_tensor(object_feats))

    @staticmethod
    def visual_selector(tokens: np.ndarray, n_objects: int, uid: str = "") -> np.ndarray:
        """``[..., M, N]`` mixing weights: one-hot for tags, uniform otherwise."""
        tokens = np.asarray(tokens)
        sel = np.full(tokens.shape + (n_objects,), 1.0 / n_objects)
        tag = (tokens >= TAG_BASE) & (tokens < VOCAB_SIZE)
        if tag.any():
            ref = tokens[tag] - TAG_BASE
            if (ref >= n_objects).any():
                raise DataError(f"instance {uid!r}: tag references object "
                                f"{int(ref.max())} but only {n_objects} objects exist")
            rows = np.zeros((len(ref), n_objects))
            rows[np.arange(len(ref)), ref] = 1.0
            sel[tag] = rows
        return sel

    def embed_sequence(self, tokens: Sequence[int], object_feats, uid: str = "") -> Tensor:
        """``[M, d_token + d_object]`` for one token list and raw object features."""
        tokens = np.asarray(tokens, dtype=np.int64)
        proj = self.project_objects(object_feats)
        return self._embed(tokens[None], proj[None] if proj.ndim == 2 else proj, uid)[0]

    def _embed(self, tokens: np.ndarray, proj: Tensor, uid: str = "") -> Tensor:
        emb = self.embed[tokens]
        visual = nx.as_tensor(self.visual_selector(tokens, proj.shape[-2], uid)) @ proj
        return nx.concat([emb, visual], axis=-1)

    def bi_gru_encode(self, seq, process: str) -> tuple[Tensor, Tensor]:
        """States ``[..., M, 2h]`` and final ``[..., 2h]`` (last forward ++ last backward)."""
        seq = nx.as_tensor(seq)
        single = seq.ndim == 2
        if single:
            seq = seq.reshape(1, *seq.shape)
        head = self.heads[process]
        fwd = gru_sequence(seq, head["gru_fwd"])
        bwd = gru_sequence(seq, head["gru_bwd"], reverse=True)
        states = nx.concat([fwd, bwd], axis=-1)
        final = nx.concat([fwd[:, -1], bwd[:, 0]], axis=-1)
        if single:
            return states[0], final[0]
        return states, final

    # ------------------------------------------------------------ scoring

    def _score_group(self, process: str, tokens: np.ndarray, proj: Tensor) -> tuple[Tensor, Tensor]:
        """Logits ``[G]`` and maps ``[G, N]`` for equal-length token rows ``[G, M]``
        with projected objects ``[G, N, d_o]``."""
        head = self.heads[process]
        x = self._embed(tokens, proj)
        states, final = self.bi_gru_encode(x, process)
        per_token = object_wise_attention(self.embed[tokens], proj, head["reatt"])
        weights = token_wise_attention(states, final, head["reatt"])
        c_o, o_hat = aggregate(weights, per_token, proj)
        hidden = nx.leaky_relu(head["W0"](nx.concat([final, o_hat], axis=-1)))
        logits = head["W1"](hidden)
        return logits.reshape(logits.shape[0]), c_o

    def score_sequences(self, process: str, sequences: list[list[int]],
                        owner: np.ndarray, object_feats) -> tuple[Tensor, Tensor]:
        """Score token sequences; ``owner[s]`` indexes the instance in ``object_feats``
        ([B, N, feature_dim]) whose objects sequence ``s`` looks at."""
        proj = self.project_objects(object_feats)
        return self._grouped(sequences, owner,
                             lambda toks, idx: self._score_group(process, toks, proj[idx]))

    def score_candidate(self, instance: Instance, query: Sequence[int],
                        candidate: Sequence[int], process: str) -> CandidateScore:
        logits, maps = self.score_sequences(
            process, [list(query) + [SEP] + list(candidate)], np.zeros(1, dtype=np.int64),
            instance.objects[None])
        return CandidateScore(logits[0], maps[0])
