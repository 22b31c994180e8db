"""Lossless JSON checkpoints: every float stored as a hex literal."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ParseError
from .optim import AdamState

FORMAT = "attnagree-checkpoint"
VERSION = 1


def _encode(name: str, arr: np.ndarray) -> dict:
    return {"name": name, "shape": list(arr.shape),
            "values": [float(v).hex() for v in arr.reshape(-1)]}


def _decode(entry: dict) -> tuple[str, np.ndarray]:
    values = np.array([float.fromhex(v) for v in entry["values"]], dtype=np.float64)
    return entry["name"], values.reshape(entry["shape"])


def _build_model(variant: str, model_config: dict, seed: int):
    from .transformer import TransformerConfig, TransformerModel
    from .vanilla import VanillaConfig, VanillaModel

    if variant == "vanilla":
        return VanillaModel(VanillaConfig(**model_config), seed=seed)
    if variant == "transformer":
        return TransformerModel(TransformerConfig(**model_config), seed=seed)
    raise ParseError(f"unknown model variant {variant!r}")


def checkpoint_document(model, state: AdamState | None = None, epoch: int = 0,
                        train_config: dict | None = None) -> dict:
    state = state or AdamState()
    names = model.params.names()
    return {
        "format": FORMAT,
        "version": VERSION,
        "variant": model.variant,
        "seed": model.seed,
        "model_config": model.config_dict(),
        "train_config": train_config or {},
        "epoch": epoch,
        "optimizer": {
            "step": state.step,
            "m": [_encode(k, state.m[k]) for k in sorted(state.m)],
            "v": [_encode(k, state.v[k]) for k in sorted(state.v)],
        },
        "params": [_encode(k, model.params[k].data) for k in names],
    }


def save_checkpoint(path, model, state: AdamState | None = None, epoch: int = 0,
                    train_config: dict | None = None) -> None:
    doc = checkpoint_document(model, state, epoch, train_config)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path):
    """Returns ``(model, adam_state, document)``."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}", line=exc.lineno) from None
    if doc.get("format") != FORMAT:
        raise ParseError(f"{path}: not a checkpoint document")
    model = _build_model(doc["variant"], doc["model_config"], doc.get("seed", 0))
    model.params.load(dict(_decode(e) for e in doc["params"]))
    opt = doc["optimizer"]
    state = AdamState(step=opt["step"],
                      m=dict(_decode(e) for e in opt["m"]),
                      v=dict(_decode(e) for e in opt["v"]))
    return model, state, doc
