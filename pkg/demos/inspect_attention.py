"""
Look inside one instance: its tokens, the per-candidate attention maps of
both processes, and where the evidence object is.

    python3 demos/inspect_attention.py [--variant transformer] [--steps 150]

The model is trained briefly first so the maps are not just noise.
"""

import argparse

import numpy as np

from attnagree.harness import TrainConfig, reference_datasets, train
from attnagree.synth import (ASK, BECAUSE, COLOR, COLOR_BASE, IS, SEP, SHAPE_BASE, TAG_BASE,
                             is_tag)

NAMES = {ASK: "ask", COLOR: "color?", BECAUSE: "because", IS: "is", SEP: "|"}


def word(t):
    if t in NAMES:
        return NAMES[t]
    if is_tag(t):
        return f"[obj{t - TAG_BASE}]"
    if SHAPE_BASE <= t < TAG_BASE:
        return f"shape{t - SHAPE_BASE}"
    return f"color{t - COLOR_BASE}"


def show(tokens):
    return " ".join(word(t) for t in tokens)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--variant", default="vanilla", choices=("vanilla", "transformer"))
    ap.add_argument("--steps", type=int, default=150)
    args = ap.parse_args()

    train_set, val_set = reference_datasets(2, n_train=800, n_val=20)
    cfg = TrainConfig(variant=args.variant, seed=2, epochs=10)
    _, model, _ = train(cfg, train_set, val_set, max_steps=args.steps)

    inst = val_set[0]
    print("question:", show(inst.question), f"  (evidence object {inst.evidence})")
    np.set_printoptions(precision=3, suppress=True)
    for title, scores, cands, gold in (
            ("answers", model.forward_q2a(inst), inst.answers, inst.answer_label),
            ("rationales", model.forward_qa2r(inst), inst.rationales, inst.rationale_label)):
        print(f"\n{title}:")
        for i, (s, c) in enumerate(zip(scores, cands)):
            amap = model.diagnostic_maps(s.attention.data)
            mark = "*" if i == gold else " "
            print(f" {mark} {show(c):28s} logit {s.logit.item():7.3f}  map {amap}")


if __name__ == "__main__":
    main()
