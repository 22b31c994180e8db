"""
Single-stream transformer that scores a candidate from the [CLS] state.

The input is ``[CLS] query [SEP] candidate [SEP] v_1 .. v_N [END]`` where
the ``v_j`` are projected object features. Text positions get ordinal
position embeddings; all visual tokens share one position vector, so the
model treats the objects as a set. Tag tokens add the referenced object's
projected feature to their token embedding.

For alignment, each layer's head-averaged [CLS] attention row is cut down to
the visual positions and renormalized, giving an ``[L, N]`` stack per
candidate.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numerics as nx
from .align import AlignConfig, layerwise_similarity
from .errors import ContractError, DataError
from .model import PROCESSES, GistModel
from .numerics import Tensor
from .params import Linear, ParamStore
from .synth import CLS, END, FEATURE_DIM, PAD, SEP, TAG_BASE, VOCAB_SIZE


@dataclass
class TransformerConfig:
    n_layers: int = 2
    n_heads: int = 2
    d_model: int = 32
    d_ff: int = 64
    max_len: int = 64
    vocab_size: int = VOCAB_SIZE
    feature_dim: int = FEATURE_DIM
    layer_mask: list[int] | None = field(default=None)

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ContractError(
                f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if self.layer_mask is not None and len(self.layer_mask) != self.n_layers:
            raise ContractError("layer_mask needs one entry per layer")


@dataclass
class BlockParams:
    query: Linear
    key: Linear
    value: Linear
    out: Linear
    ln1_gain: Tensor
    ln1_shift: Tensor
    ff1: Linear
    ff2: Linear
    ln2_gain: Tensor
    ln2_shift: Tensor
    n_heads: int

    @classmethod
    def create(cls, store: ParamStore, prefix: str, d: int, d_ff: int, k: int):
        return cls(
            query=store.linear(f"{prefix}.query", d, d),
            key=store.linear(f"{prefix}.key", d, d),
            value=store.linear(f"{prefix}.value", d, d),
            out=store.linear(f"{prefix}.out", d, d),
            ln1_gain=store.constant(f"{prefix}.ln1.gain", 1.0, (d,)),
            ln1_shift=store.constant(f"{prefix}.ln1.shift", 0.0, (d,)),
            ff1=store.linear(f"{prefix}.ff1", d, d_ff),
            ff2=store.linear(f"{prefix}.ff2", d_ff, d),
            ln2_gain=store.constant(f"{prefix}.ln2.gain", 1.0, (d,)),
            ln2_shift=store.constant(f"{prefix}.ln2.shift", 0.0, (d,)),
            n_heads=k,
        )


def _split_heads(x: Tensor, k: int) -> Tensor:
    *lead, S, d = x.shape
    return nx.swapaxes(x.reshape(*lead, S, k, d // k), -2, -3)    # [..., k, S, d_k]


def multi_head_self_attention(x, p: BlockParams) -> tuple[Tensor, Tensor]:
    """Returns the projected output ``[..., S, d]`` and attention ``[..., k, S, S]``."""
    x = nx.as_tensor(x)
    d = x.shape[-1]
    k = p.n_heads
    if d % k:
        raise ContractError(f"model dim {d} not divisible by {k} heads")
    q, kk, v = (_split_heads(lin(x), k) for lin in (p.query, p.key, p.value))
    scores = (q @ nx.swapaxes(kk, -1, -2)) * (1.0 / math.sqrt(d // k))
    attn = nx.softmax(scores, axis=-1)
    heads = nx.swapaxes(attn @ v, -2, -3)                           # [..., S, k, d_k]
    merged = heads.reshape(*heads.shape[:-2], d)
    return p.out(merged), attn


def transformer_block(x, p: BlockParams) -> tuple[Tensor, Tensor]:
    """Post-norm block: ``LN(x + MSA(x))`` then ``LN(h + FFN(h))``."""
    a, attn = multi_head_self_attention(x, p)
    h = nx.layer_norm(x + a, p.ln1_gain, p.ln1_shift)
    f = p.ff2(nx.leaky_relu(p.ff1(h)))
    return nx.layer_norm(h + f, p.ln2_gain, p.ln2_shift), attn


def extract_cls_visual_attention(per_layer: list, visual_positions) -> Tensor:
    """``[..., L, N]``: head-averaged [CLS] row restricted to the visual
    positions and renormalized, one row per layer."""
    pos = np.asarray(sorted(visual_positions), dtype=np.int64)
    if pos.size == 0:
        raise ContractError("no visual positions to extract")
    rows = []
    for attn in per_layer:
        attn = nx.as_tensor(attn)
        cls_row = attn[..., 0, :].mean(axis=-2)                   # [..., S]
        vis = cls_row[..., pos]
        mass = vis.sum(axis=-1, keepdims=True)
        if (mass.data <= 0).any():
            raise ContractError("zero attention mass on visual tokens")
        rows.append(vis / mass)
    return nx.stack(rows, axis=-2)


class TransformerModel(GistModel):
    variant = "transformer"

    def __init__(self, config: TransformerConfig | None = None, seed: int = 0):
        self.config = cfg = config or TransformerConfig()
        self.seed = seed
        store = self.params = ParamStore(seed)
        d = cfg.d_model
        self.embed = store.table("shared.embed", cfg.vocab_size, d)
        self.visual = store.linear("shared.visual", cfg.feature_dim, d)
        self.position = store.table("shared.position", cfg.max_len, d)
        self.visual_position = store.table("shared.visual_position", 1, d)
        self.segment = store.table("shared.segment", 2, d)
        self.blocks = {}
        self.heads = {}
        for proc in PROCESSES:
            self.blocks[proc] = [BlockParams.create(store, f"{proc}.layer{i}", d, cfg.d_ff,
                                                    cfg.n_heads)
                                 for i in range(cfg.n_layers)]
            self.heads[proc] = store.linear(f"{proc}.classifier", d, 1)

    def config_dict(self) -> dict:
        return asdict(self.config)

    # ------------------------------------------------------------ sequence assembly

    def layout(self, query_len: int, cand_len: int, n_objects: int) -> tuple[int, np.ndarray]:
        """Sequence length and visual positions for the given part sizes."""
        start = 1 + query_len + 1 + cand_len + 1
        length = start + n_objects + 1
        if length > self.config.max_len:
            raise DataError(f"sequence length {length} exceeds maximum {self.config.max_len}")
        return length, np.arange(start, start + n_objects)

    def _frame(self, text_rows: np.ndarray, n_objects: int):
        """Token ids, text mask, visual selector for ``[G, S]`` frames.

        ``text_rows`` are ``query ++ [SEP] ++ candidate`` rows of equal length.
        """
        G, T = text_rows.shape
        S = T + 3 + n_objects
        if S > self.config.max_len:
            raise DataError(f"sequence length {S} exceeds maximum {self.config.max_len}")
        ids = np.full((G, S), PAD, dtype=np.int64)
        ids[:, 0] = CLS
        ids[:, 1:T + 1] = text_rows
        ids[:, T + 1] = SEP
        ids[:, -1] = END
        visual = np.arange(T + 2, T + 2 + n_objects)
        text = np.ones(S)
        text[visual] = 0.0
        sel = np.zeros((G, S, n_objects))
        sel[:, visual, np.arange(n_objects)] = 1.0
        tag = (ids >= TAG_BASE) & (ids < VOCAB_SIZE)
        if tag.any():
            gi, si = np.nonzero(tag)
            ref = ids[gi, si] - TAG_BASE
            if (ref >= n_objects).any():
                raise DataError(f"tag references object {int(ref.max())} "
                                f"but only {n_objects} objects exist")
            sel[gi, si, ref] = 1.0
        return ids, text, sel, visual

    def _embed(self, text_rows: np.ndarray, proj: Tensor) -> tuple[Tensor, np.ndarray]:
        n = proj.shape[-2]
        ids, text, sel, visual = self._frame(text_rows, n)
        S = ids.shape[1]
        tokens = self.embed[ids] * text[:, None]
        objects = nx.as_tensor(sel) @ proj
        pos = (self.position[np.arange(S)] * text[:, None]
               + self.visual_position * (1.0 - text)[:, None])
        seg = self.segment[(1.0 - text).astype(np.int64)]
        return tokens + objects + pos + seg, visual

    def build_sequence(self, query, candidate, object_feats) -> tuple[Tensor, np.ndarray]:
        """Embedded ``[S, d]`` sequence for one candidate and its visual positions."""
        row = np.asarray([list(query) + [SEP] + list(candidate)], dtype=np.int64)
        proj = self.visual(nx.as_tensor(object_feats))
        x, visual = self._embed(row, proj.reshape(1, *proj.shape))
        return x[0], visual

    # ------------------------------------------------------------ scoring

    def encode(self, x, process: str) -> tuple[Tensor, list[Tensor]]:
        attns = []
        for block in self.blocks[process]:
            x, attn = transformer_block(x, block)
            attns.append(attn)
        return x, attns

    def _score_group(self, process, rows: np.ndarray, proj: Tensor):
        x, visual = self._embed(rows, proj)
        h, attns = self.encode(x, process)
        logits = self.heads[process](h[:, 0])
        stack = extract_cls_visual_attention(attns, visual)
        return logits.reshape(logits.shape[0]), stack

    def score_sequences(self, process, sequences, owner, object_feats):
        proj = self.visual(nx.as_tensor(object_feats))
        return self._grouped(sequences, owner,
                             lambda rows, idx: self._score_group(process, rows, proj[idx]))

    def transformer_forward(self, instance, query, candidate, process: str
                            ) -> tuple[Tensor, Tensor]:
        """Logit and ``[L, N]`` attention stack for one candidate."""
        logits, stacks = self.score_sequences(
            process, [list(query) + [SEP] + list(candidate)], np.zeros(1, dtype=np.int64),
            instance.objects[None])
        return logits[0], stacks[0]

    # ------------------------------------------------------------ alignment

    def layer_mask(self) -> np.ndarray:
        mask = self.config.layer_mask
        return np.ones(self.config.n_layers) if mask is None else np.asarray(mask, dtype=float)

    def align_similarity(self, cfg: AlignConfig):
        mask = self.layer_mask()
        return lambda p, t: layerwise_similarity(p, t, cfg, mask)

    def diagnostic_maps(self, maps: np.ndarray) -> np.ndarray:
        mask = self.layer_mask()
        return (maps * (mask / mask.sum())[:, None]).sum(axis=-2)


def layerwise_alignment(stack_p, stack_t, cfg: AlignConfig, layer_mask=None) -> Tensor:
    return layerwise_similarity(stack_p, stack_t, cfg, layer_mask)
