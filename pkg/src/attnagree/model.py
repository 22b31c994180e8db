"""Behaviour shared by both model variants: batching candidates and the
joint forward pass of the two processes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .align import AlignConfig, similarity
from .numerics import Tensor
from .synth import N_CHOICES, SEP, Instance

PROCESSES = ("qa", "qar")


@dataclass
class CandidateScore:
    logit: Tensor
    attention: Tensor


@dataclass
class BatchOutput:
    qa_logits: Tensor   # [B, 4]
    qa_maps: Tensor     # [B, 4, ...]
    qar_logits: Tensor
    qar_maps: Tensor


def qar_query(instance: Instance, answer: Sequence[int] | None = None) -> list[int]:
    """Question ++ [SEP] ++ answer; the gold answer unless one is given."""
    if answer is None:
        answer = instance.answers[instance.answer_label]
    return list(instance.question) + [SEP] + list(answer)


class GistModel:
    """Base class. Subclasses set ``params`` and implement ``score_sequences``."""

    variant = ""
    params: dict

    def score_sequences(self, process: str, sequences: list[list[int]],
                        owner: np.ndarray, object_feats) -> tuple[Tensor, Tensor]:
        raise NotImplementedError

    def config_dict(self) -> dict:
        raise NotImplementedError

    def align_similarity(self, cfg: AlignConfig) -> Callable[[Tensor, Tensor], Tensor]:
        return lambda p, t: similarity(p, t, cfg)

    def diagnostic_maps(self, maps: np.ndarray) -> np.ndarray:
        """Reduce model attention output to one distribution over objects."""
        return maps

    @staticmethod
    def _grouped(sequences, owner, fn) -> tuple[Tensor, Tensor]:
        """Run ``fn(tokens[G, M], owner[G])`` per distinct length; results in input order."""
        lengths = np.array([len(s) for s in sequences])
        uniq = np.unique(lengths)
        if len(uniq) == 1:
            return fn(np.asarray(sequences, dtype=np.int64), np.asarray(owner))
        logits, maps, order = [], [], []
        for m in uniq:
            (idx,) = np.nonzero(lengths == m)
            toks = np.asarray([sequences[i] for i in idx], dtype=np.int64)
            lg, mp = fn(toks, np.asarray(owner)[idx])
            logits.append(lg)
            maps.append(mp)
            order.extend(idx.tolist())
        inverse = np.argsort(order)
        return nx.concat(logits, axis=0)[inverse], nx.concat(maps, axis=0)[inverse]

    def _process_outputs(self, process, instances, queries, candidates):
        seqs, owner = [], []
        for b, (q, cands) in enumerate(zip(queries, candidates)):
            for c in cands:
                seqs.append(list(q) + [SEP] + list(c))
                owner.append(b)
        objects = [inst.objects for inst in instances]
        # tensor-valued features (gradient checks on the inputs) stay on the tape
        feats = (nx.stack([nx.as_tensor(o) for o in objects])
                 if any(isinstance(o, Tensor) for o in objects) else np.stack(objects))
        logits, maps = self.score_sequences(process, seqs, np.asarray(owner), feats)
        B = len(instances)
        return logits.reshape(B, N_CHOICES), maps.reshape(B, N_CHOICES, *maps.shape[1:])

    def forward_batch(self, instances: Sequence[Instance]) -> BatchOutput:
        """Both processes for every instance; the rationale query uses the gold answer."""
        qa_logits, qa_maps = self._process_outputs(
            "qa", instances, [i.question for i in instances], [i.answers for i in instances])
        qar_logits, qar_maps = self._process_outputs(
            "qar", instances, [qar_query(i) for i in instances], [i.rationales for i in instances])
        return BatchOutput(qa_logits, qa_maps, qar_logits, qar_maps)

    def _candidates(self, process, instance, query, cands) -> list[CandidateScore]:
        logits, maps = self._process_outputs(process, [instance], [query], [cands])
        return [CandidateScore(logits[0, i], maps[0, i]) for i in range(N_CHOICES)]

    def forward_q2a(self, instance: Instance) -> list[CandidateScore]:
        return self._candidates("qa", instance, instance.question, instance.answers)

    def forward_qa2r(self, instance: Instance, answer: Sequence[int] | None = None
                     ) -> list[CandidateScore]:
        return self._candidates("qar", instance, qar_query(instance, answer), instance.rationales)


def predict(logits: np.ndarray) -> np.ndarray:
    """Argmax over the last axis; ties go to the lowest index."""
    return np.argmax(np.asarray(logits), axis=-1)
