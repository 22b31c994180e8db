"""
Seeded generator for paired multiple-choice instances grounded in one object.

Each instance has ``N`` objects with distinct shapes and distinct colors.
One of them is the evidence object. The question names its shape, the
correct answer is its color, and the correct rationale tags it and states
its color. Distractor answers are colors of other objects; distractor
rationales make true statements about other objects.

All randomness comes from splitmix64 so the byte stream of a dataset is
fixed by its seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError

MASK64 = (1 << 64) - 1

# token-id layout
PAD, CLS, SEP, END, ASK, COLOR, BECAUSE, IS = range(8)
COLOR_BASE, SHAPE_BASE, TAG_BASE = 8, 16, 24
N_COLORS = N_SHAPES = MAX_OBJECTS = 8
VOCAB_SIZE = TAG_BASE + MAX_OBJECTS
FEATURE_DIM = N_COLORS + N_SHAPES
N_CHOICES = 4


def color_token(c: int) -> int:
    return COLOR_BASE + c


def shape_token(s: int) -> int:
    return SHAPE_BASE + s


def tag_token(i: int) -> int:
    return TAG_BASE + i


def is_tag(token: int) -> bool:
    return TAG_BASE <= token < TAG_BASE + MAX_OBJECTS


def splitmix64_next(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


class SplitMix64:
    """Stateful wrapper around :func:`splitmix64_next`."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state, out = splitmix64_next(self.state)
        return out

    def uniform(self) -> float:
        # top 53 bits: exactly representable, strictly below 1
        return (self.next() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        return min(int(self.uniform() * n), n - 1)

    def shuffle(self, items: list) -> list:
        """Fisher-Yates in place, from the back."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]
        return items

    def sample(self, population: list, k: int) -> list:
        """``k`` distinct items, in draw order (partial Fisher-Yates from the front)."""
        pool = list(population)
        for i in range(k):
            j = i + self.randbelow(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def gauss_pair(self) -> tuple[float, float]:
        """Two independent standard normals by Box-Muller."""
        u1 = 1.0 - self.uniform()  # (0, 1]
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        return r * math.cos(2.0 * math.pi * u2), r * math.sin(2.0 * math.pi * u2)


@dataclass
class GenConfig:
    seed: int = 0
    count: int = 100
    n_objects: int = 6
    noise_sigma: float = 0.1

    def validate(self) -> "GenConfig":
        if not N_CHOICES <= self.n_objects <= MAX_OBJECTS:
            raise ConfigError(
                f"n_objects must lie in [{N_CHOICES}, {MAX_OBJECTS}], got {self.n_objects}")
        if self.count < 0:
            raise ConfigError(f"count must be nonnegative, got {self.count}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class Instance:
    objects: np.ndarray
    question: list[int]
    answers: list[list[int]]
    rationales: list[list[int]]
    answer_label: int
    rationale_label: int
    evidence: int
    uid: str = field(default="")

    @property
    def n_objects(self) -> int:
        return self.objects.shape[0]

    def validate(self) -> "Instance":
        n = self.n_objects
        if len(self.answers) != N_CHOICES or len(self.rationales) != N_CHOICES:
            raise DataError(f"instance {self.uid!r}: expected {N_CHOICES} answers and rationales")
        if not (0 <= self.answer_label < N_CHOICES and 0 <= self.rationale_label < N_CHOICES):
            raise DataError(f"instance {self.uid!r}: label out of range")
        if not 0 <= self.evidence < n:
            raise DataError(f"instance {self.uid!r}: evidence {self.evidence} outside {n} objects")
        for seq in [self.question, *self.answers, *self.rationales]:
            for t in seq:
                if not 0 <= t < VOCAB_SIZE:
                    raise DataError(f"instance {self.uid!r}: token {t} outside vocabulary")
                if is_tag(t) and t - TAG_BASE >= n:
                    raise DataError(
                        f"instance {self.uid!r}: tag token {t} references missing object "
                        f"{t - TAG_BASE} (have {n})")
        return self

    def to_record(self) -> dict:
        return {
            "uid": self.uid,
            "objects": self.objects.tolist(),
            "question": self.question,
            "answers": self.answers,
            "rationales": self.rationales,
            "answer_label": self.answer_label,
            "rationale_label": self.rationale_label,
            "evidence": self.evidence,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Instance":
        objects = np.asarray(rec["objects"], dtype=np.float64)
        if objects.ndim != 2:
            raise DataError("objects must be a 2-D list")
        return cls(
            objects=objects,
            question=[int(t) for t in rec["question"]],
            answers=[[int(t) for t in a] for a in rec["answers"]],
            rationales=[[int(t) for t in r] for r in rec["rationales"]],
            answer_label=int(rec["answer_label"]),
            rationale_label=int(rec["rationale_label"]),
            evidence=int(rec["evidence"]),
            uid=str(rec.get("uid", "")),
        ).validate()

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (np.array_equal(self.objects, other.objects)
                and self.to_record() == other.to_record())


def gen_instance(rng: SplitMix64, cfg: GenConfig, uid: str = "") -> Instance:
    """Draw one instance from ``rng``; the draw order fixes the output."""
    cfg.validate()
    n = cfg.n_objects
    shapes = rng.sample(list(range(N_SHAPES)), n)
    colors = rng.sample(list(range(N_COLORS)), n)

    feats = np.zeros((n, FEATURE_DIM))
    for i in range(n):
        feats[i, colors[i]] = 1.0
        feats[i, N_COLORS + shapes[i]] = 1.0
        noise = []
        while len(noise) < FEATURE_DIM:
            noise.extend(rng.gauss_pair())
        feats[i] += cfg.noise_sigma * np.asarray(noise[:FEATURE_DIM])

    e = rng.randbelow(n)
    others = [i for i in range(n) if i != e]

    answer_objs = rng.shuffle([e] + rng.sample(others, N_CHOICES - 1))
    rationale_objs = rng.shuffle([e] + rng.sample(others, N_CHOICES - 1))

    return Instance(
        objects=feats,
        question=[ASK, COLOR, shape_token(shapes[e])],
        answers=[[color_token(colors[o])] for o in answer_objs],
        rationales=[[BECAUSE, tag_token(o), IS, color_token(colors[o])] for o in rationale_objs],
        answer_label=answer_objs.index(e),
        rationale_label=rationale_objs.index(e),
        evidence=e,
        uid=uid,
    )


def generate(cfg: GenConfig) -> list[Instance]:
    """``cfg.count`` instances; instance ``k`` uses its own stream seeded from the master."""
    cfg.validate()
    master = SplitMix64(cfg.seed)
    return [gen_instance(SplitMix64(master.next()), cfg, uid=f"{cfg.seed}-{k}")
            for k in range(cfg.count)]


def write_dataset(path, data: GenConfig | list[Instance]) -> list[Instance]:
    """Write a generator config's instances (or a ready list), one JSON record
    per line. Floats use shortest round-trip repr, so the write is lossless
    and the bytes depend only on the instances. Returns what was written."""
    instances = generate(data) if isinstance(data, GenConfig) else list(data)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_record(), separators=(",", ":")))
            fh.write("\n")
    return instances


def read_dataset(path) -> list[Instance]:
    out = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(Instance.from_record(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ParseError(str(exc), line=lineno) from None
    return out


def oracle_predict(inst: Instance) -> tuple[int, int]:
    """Answer and rationale picked by reading the features directly.

    Finds the object whose shape matches the question's shape token, then
    chooses the answer naming its color and the rationale tagging it.
    """
    shape = inst.question[-1] - SHAPE_BASE
    shapes = inst.objects[:, N_COLORS:].argmax(axis=1)
    colors = inst.objects[:, :N_COLORS].argmax(axis=1)
    (matches,) = np.nonzero(shapes == shape)
    if len(matches) != 1:
        raise DataError(f"instance {inst.uid!r}: shape token does not pick a unique object")
    obj = int(matches[0])
    target = color_token(int(colors[obj]))
    ans = next(i for i, a in enumerate(inst.answers) if a == [target])
    rat = next(i for i, r in enumerate(inst.rationales) if r[1] == tag_token(obj))
    return ans, rat
