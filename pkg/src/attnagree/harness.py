"""
Training and evaluation driver.

``train`` runs the seeded epoch loop and returns a :class:`TrainReport`;
``evaluate`` computes the three accuracies plus attention diagnostics;
``similarity_histogram`` and ``lambda_sweep`` produce the CSV tables.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .align import AlignConfig
from .checkpoint import save_checkpoint
from .errors import ConfigError, ContractError, NumericError
from .model import GistModel, predict
from .optim import AdamState
from .synth import Instance, SplitMix64, read_dataset
from .training import training_step
from .transformer import TransformerConfig, TransformerModel
from .vanilla import VanillaConfig, VanillaModel

log = logging.getLogger(__name__)

VARIANTS = ("vanilla", "transformer")
EVAL_CHUNK = 128


@dataclass
class TrainConfig:
    variant: str = "vanilla"
    align_mode: str = "dot"
    lam: float = 1.0
    alpha: float = 10.0
    lr: float = 2e-3
    batch_size: int = 32
    epochs: int = 20
    seed: int = 1
    train_data: str | None = None
    val_data: str | None = None
    checkpoint: str | None = None
    report: str | None = None
    eval_every: int = 1
    model: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.epochs < 0 or self.eval_every < 1:
            raise ConfigError("epochs must be >= 0 and eval_every >= 1")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        self.align = AlignConfig(self.align_mode, self.alpha, self.lam)
        self.lam = self.align.lam

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad config value: {exc}") from None

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None


@dataclass
class EpochRecord:
    epoch: int
    loss_qa: float
    loss_qar: float
    loss_align: float
    acc_q2a: float
    acc_qa2r: float
    acc_q2ar: float
    gold_similarity: float
    evidence_mass_qa: float
    evidence_mass_qar: float
    seconds: float = 0.0


@dataclass
class TrainReport:
    records: list[EpochRecord] = field(default_factory=list)

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]

    def to_csv(self, include_timing: bool = False) -> str:
        cols = [f.name for f in fields(EpochRecord)]
        if not include_timing:
            cols.remove("seconds")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for rec in self.records:
            row = asdict(rec)
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in cols])
        return buf.getvalue()


def build_model(variant: str, model_config: dict | None = None, seed: int = 0) -> GistModel:
    model_config = model_config or {}
    try:
        if variant == "vanilla":
            return VanillaModel(VanillaConfig(**model_config), seed=seed)
        if variant == "transformer":
            return TransformerModel(TransformerConfig(**model_config), seed=seed)
    except TypeError as exc:
        raise ConfigError(f"bad model settings: {exc}") from None
    raise ConfigError(f"unknown variant {variant!r}")


# ---------------------------------------------------------------- evaluation


@dataclass
class DatasetOutputs:
    qa_logits: np.ndarray     # [D, 4]
    qar_logits: np.ndarray
    qa_maps: np.ndarray       # [D, 4, N] (reduced over layers)
    qar_maps: np.ndarray
    gold_similarity: np.ndarray  # [D]


def score_dataset(model: GistModel, dataset: Sequence[Instance]) -> DatasetOutputs:
    """Forward both processes over ``dataset`` without recording gradients."""
    sim = model.align_similarity(AlignConfig("dot"))
    parts = []
    with nx.no_grad():
        for start in range(0, len(dataset), EVAL_CHUNK):
            chunk = dataset[start:start + EVAL_CHUNK]
            out = model.forward_batch(chunk)
            rows = np.arange(len(chunk))
            ga = np.array([i.answer_label for i in chunk])
            gr = np.array([i.rationale_label for i in chunk])
            s = sim(out.qa_maps[rows, ga], out.qar_maps[rows, gr]).data
            parts.append((out.qa_logits.data, out.qar_logits.data,
                          model.diagnostic_maps(out.qa_maps.data),
                          model.diagnostic_maps(out.qar_maps.data), s))
    return DatasetOutputs(*(np.concatenate(p) for p in zip(*parts)))


def metrics_from_outputs(qa_logits, qar_logits, dataset: Sequence[Instance],
                         qa_maps=None, qar_maps=None, gold_similarity=None) -> dict:
    """Accuracies from candidate logits; attention diagnostics when maps are given.

    The rationale logits must come from queries carrying the gold answer;
    Q->AR counts an instance only when both argmaxes are right.
    """
    gold_a = np.array([i.answer_label for i in dataset])
    gold_r = np.array([i.rationale_label for i in dataset])
    hit_a = predict(qa_logits) == gold_a
    hit_r = predict(qar_logits) == gold_r
    out = {
        "acc_q2a": float(hit_a.mean()),
        "acc_qa2r": float(hit_r.mean()),
        "acc_q2ar": float((hit_a & hit_r).mean()),
    }
    if qa_maps is not None:
        rows = np.arange(len(dataset))
        ev = np.array([i.evidence for i in dataset])
        gm_a = qa_maps[rows, gold_a]
        gm_r = qar_maps[rows, gold_r]
        out["evidence_mass_qa"] = float(gm_a[rows, ev].mean())
        out["evidence_mass_qar"] = float(gm_r[rows, ev].mean())
        out["gold_similarity"] = float(np.mean(gold_similarity))
    return out


def evaluate(model: GistModel, dataset: Sequence[Instance]) -> dict:
    if not dataset:
        raise ContractError("evaluate needs a nonempty dataset")
    o = score_dataset(model, dataset)
    return metrics_from_outputs(o.qa_logits, o.qar_logits, dataset,
                                o.qa_maps, o.qar_maps, o.gold_similarity)


def similarity_histogram(model: GistModel, dataset: Sequence[Instance], bins: int = 10
                         ) -> list[tuple[float, float, int]]:
    """Counts of gold-pair dot similarities in ``bins`` equal bins over [0, 1]."""
    if bins < 2:
        raise ContractError("need at least 2 bins")
    return histogram_rows(score_dataset(model, dataset).gold_similarity, bins)


def histogram_rows(values, bins: int) -> list[tuple[float, float, int]]:
    values = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    edges = np.linspace(0.0, 1.0, bins + 1)
    # last bin is closed on the right
    idx = np.minimum(np.searchsorted(edges, values, side="right") - 1, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]


def rows_to_csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------- training


def _load_sets(config: TrainConfig, train_set, val_set):
    if train_set is None:
        if not config.train_data:
            raise ConfigError("no training data given")
        train_set = read_dataset(config.train_data)
    if val_set is None and config.val_data:
        val_set = read_dataset(config.val_data)
    if not train_set:
        raise ConfigError("training set is empty")
    return list(train_set), (list(val_set) if val_set else list(train_set))


def _run_seeds(config: TrainConfig) -> tuple[int, int]:
    """Model-initialization and shuffling seeds, both drawn from ``config.seed``."""
    master = SplitMix64(config.seed)
    return master.next(), master.next()


def initial_model(config: TrainConfig) -> GistModel:
    """The untrained model that :func:`train` starts from for ``config``."""
    return build_model(config.variant, config.model, _run_seeds(config)[0])


def train(config: TrainConfig, train_set: Sequence[Instance] | None = None,
          val_set: Sequence[Instance] | None = None, model: GistModel | None = None,
          max_steps: int | None = None, on_step=None):
    """Seeded training loop. Returns ``(report, model, adam_state)``.

    ``max_steps`` stops after that many updates (the partial epoch is not
    evaluated). ``on_step(step, model)`` is called after every update.
    """
    train_set, val_set = _load_sets(config, train_set, val_set)
    model_seed, shuffle_seed = _run_seeds(config)
    if model is None:
        model = build_model(config.variant, config.model, model_seed)
    state = AdamState()
    order_rng = SplitMix64(shuffle_seed)
    report = TrainReport()
    step = 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = order_rng.shuffle(list(range(len(train_set))))
        sums = np.zeros(3)
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[start:start + config.batch_size]]
            try:
                parts = training_step(model, batch, config.align, state, config.lr)
            except NumericError:
                if config.checkpoint:
                    save_checkpoint(config.checkpoint, model, state, epoch - 1, config.to_dict())
                log.error("non-finite value at epoch %d step %d; last good state kept",
                          epoch, step)
                raise
            sums += (parts.qa, parts.qar, parts.align)
            n_batches += 1
            step += 1
            if on_step is not None:
                on_step(step, model)
            if max_steps is not None and step >= max_steps:
                return report, model, state
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            m = evaluate(model, val_set)
            mean = sums / n_batches
            rec = EpochRecord(epoch, *map(float, mean), m["acc_q2a"], m["acc_qa2r"],
                              m["acc_q2ar"], m["gold_similarity"], m["evidence_mass_qa"],
                              m["evidence_mass_qar"], time.perf_counter() - t0)
            report.records.append(rec)
            log.info("epoch %d  loss %.4f/%.4f/%.4f  acc %.3f/%.3f/%.3f  sim %.3f",
                     epoch, *mean, rec.acc_q2a, rec.acc_qa2r, rec.acc_q2ar,
                     rec.gold_similarity)
    if config.checkpoint:
        save_checkpoint(config.checkpoint, model, state, config.epochs, config.to_dict())
    if config.report:
        Path(config.report).write_text(report.to_csv(), encoding="utf-8")
    return report, model, state


SWEEP_HEADER = ("lambda", "acc_q2a", "acc_qa2r", "acc_q2ar", "gold_similarity",
                "evidence_mass_qa", "evidence_mass_qar")


def lambda_sweep(config: TrainConfig, lambdas: Sequence[float], train_set=None, val_set=None
                 ) -> list[tuple]:
    """Train once per weight; one summary row of final validation metrics each."""
    train_set, val_set = _load_sets(config, train_set, val_set)
    rows = []
    for lam in lambdas:
        d = config.to_dict()
        d.update({"lambda": float(lam), "checkpoint": None, "report": None})
        if config.align_mode == "none" and lam > 0:
            d["align_mode"] = "dot"
        report, _, _ = train(TrainConfig.from_dict(d), train_set, val_set)
        f = report.final
        rows.append((float(lam), f.acc_q2a, f.acc_qa2r, f.acc_q2ar, f.gold_similarity,
                     f.evidence_mass_qa, f.evidence_mass_qar))
    return rows


def reference_datasets(seed: int, n_train: int = 2000, n_val: int = 500, n_objects: int = 6):
    """Train/validation split of one generated stream: the first ``n_train``
    instances train, the next ``n_val`` validate."""
    from .synth import GenConfig, generate

    data = generate(GenConfig(seed=seed, count=n_train + n_val, n_objects=n_objects))
    return data[:n_train], data[n_train:]
