"""
Train the recurrent model with and without the alignment term on a small
synthetic set and compare accuracy and gold-pair attention similarity.

    python3 demos/quickstart.py [--epochs 8] [--train 1000]

Each epoch on 1000 instances takes a few seconds on one core.
"""

import argparse

from attnagree.harness import (TrainConfig, histogram_rows, reference_datasets, score_dataset,
                               train)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=8)
    ap.add_argument("--train", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    train_set, val_set = reference_datasets(args.seed, n_train=args.train, n_val=200)
    print(f"{len(train_set)} training and {len(val_set)} validation instances\n")

    for lam in (0.0, 1.0):
        cfg = TrainConfig(seed=args.seed, lam=lam, epochs=args.epochs)
        report, model, _ = train(cfg, train_set, val_set)
        print(f"lambda = {lam}")
        print("  epoch  Q->A   QA->R  Q->AR  similarity")
        for r in report.records:
            print(f"  {r.epoch:5d}  {r.acc_q2a:.3f}  {r.acc_qa2r:.3f}  {r.acc_q2ar:.3f}  "
                  f"{r.gold_similarity:.3f}")
        # histogram of the final per-instance similarities, five bins
        sims = score_dataset(model, val_set).gold_similarity
        bars = " ".join(f"{n:3d}" for _, _, n in histogram_rows(sims, 5))
        print(f"  similarity histogram over [0, 1] in 5 bins: {bars}\n")


if __name__ == "__main__":
    main()
