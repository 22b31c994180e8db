"""
Command-line entry point.

    attnagree gen-data --seed 42 --count 2500 --out data.jsonl
    attnagree train --config run.json
    attnagree eval --checkpoint model.json --data val.jsonl
    attnagree gradcheck --variant vanilla
    attnagree hist --checkpoint model.json --data val.jsonl --bins 10 --out hist.csv
    attnagree sweep --config run.json --lambdas 0,0.2,0.4,1,4

Exit status is 0 on success, 1 for configuration or data problems and 2 for
numeric failures (a non-finite loss or a failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .errors import ConfigError, ContractError, DataError, NumericError
from .gradcheck import model_suite, op_suite
from .harness import (SWEEP_HEADER, TrainConfig, evaluate, lambda_sweep, rows_to_csv,
                      similarity_histogram, train)
from .synth import GenConfig, read_dataset, write_dataset

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2

log = logging.getLogger("attnagree")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _parse_lambdas(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad lambda list {text!r}") from None
    if not values:
        raise ConfigError("empty lambda list")
    return values


def cmd_gen_data(args) -> int:
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: {exc}") from None
        cfg = GenConfig.from_dict(doc)
    else:
        cfg = GenConfig()
    for name in ("seed", "count", "n_objects", "noise_sigma"):
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, name, value)
    cfg.validate()
    data = write_dataset(args.out, cfg)
    log.info("wrote %d instances to %s", len(data), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = TrainConfig.load(args.config)
    report, _, _ = train(cfg)
    if not cfg.report:
        sys.stdout.write(report.to_csv(include_timing=args.timing))
    elif args.timing:
        Path(cfg.report).write_text(report.to_csv(include_timing=True), encoding="utf-8")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _, _ = load_checkpoint(args.checkpoint)
    data = read_dataset(args.data)
    if not data:
        raise DataError(f"{args.data}: no instances")
    m = evaluate(model, data)
    keys = ("acc_q2a", "acc_qa2r", "acc_q2ar", "gold_similarity",
            "evidence_mass_qa", "evidence_mass_qar")
    _emit(rows_to_csv(keys, [[repr(m[k]) for k in keys]]), args.out)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    variants = ("vanilla", "transformer") if args.variant == "all" else (args.variant,)
    results = op_suite(args.points, args.seed)
    results += [model_suite(v, args.points, args.seed) for v in variants]
    ok = True
    for r in results:
        ok &= r.passed
        print(f"{'ok  ' if r.passed else 'FAIL'} {r.name:34s} {r.worst:.3e}")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_hist(args) -> int:
    model, _, _ = load_checkpoint(args.checkpoint)
    data = read_dataset(args.data)
    rows = similarity_histogram(model, data, args.bins)
    _emit(rows_to_csv(("bin_low", "bin_high", "count"),
                      [(repr(lo), repr(hi), n) for lo, hi, n in rows]), args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = TrainConfig.load(args.config)
    rows = lambda_sweep(cfg, _parse_lambdas(args.lambdas))
    _emit(rows_to_csv(SWEEP_HEADER, [[repr(v) for v in row] for row in rows]), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="attnagree", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--seed", type=int)
    g.add_argument("--count", type=int)
    g.add_argument("--n-objects", dest="n_objects", type=int)
    g.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    g.add_argument("--config", help="generator settings as JSON; flags override it")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--timing", action="store_true", help="include wall-clock seconds")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    c.add_argument("--variant", choices=("vanilla", "transformer", "all"), default="all")
    c.add_argument("--points", type=int, default=10)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)

    h = sub.add_parser("hist", help="histogram of gold-pair attention similarity")
    h.add_argument("--checkpoint", required=True)
    h.add_argument("--data", required=True)
    h.add_argument("--bins", type=int, default=10)
    h.add_argument("--out")
    h.set_defaults(func=cmd_hist)

    s = sub.add_parser("sweep", help="train once per alignment weight")
    s.add_argument("--config", required=True)
    s.add_argument("--lambdas", required=True, help="comma-separated weights")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (ConfigError, DataError, ContractError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
