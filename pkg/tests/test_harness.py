import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from attnagree import cli, harness
from attnagree.checkpoint import load_checkpoint, save_checkpoint
from attnagree.errors import ConfigError, ContractError, NumericError
from attnagree.gradcheck import CheckResult
from attnagree.harness import (TrainConfig, evaluate, histogram_rows, lambda_sweep,
                               metrics_from_outputs, similarity_histogram, train)
from attnagree.numerics import Tensor
from attnagree.optim import AdamState, adam_step
from attnagree.synth import GenConfig, generate, write_dataset

TINY = {"d_token": 4, "d_object": 4, "d_hidden": 4, "d_att": 4, "d_classifier": 4}


@pytest.fixture(scope="module")
def small_sets():
    data = generate(GenConfig(seed=11, count=60))
    return data[:40], data[40:]


def tiny_config(**kw):
    base = {"epochs": 2, "batch_size": 16, "seed": 3, "model": dict(TINY)}
    base.update(kw)
    return TrainConfig.from_dict(base)


# ---------------------------------------------------------------- optimizer


def test_adam_first_step_closed_form():
    g = np.array([0.3, -2.0, 1e-3, 0.0])
    p = {"w": Tensor(np.ones(4))}
    adam_step(p, {"w": g}, AdamState(), lr=2e-3)
    # bias-corrected first moments are g and g*g, so the step is lr * g / (|g| + eps)
    ref = 1.0 - 2e-3 * g / (np.abs(g) + 1e-8)
    assert np.max(np.abs(p["w"].data - ref)) < 1e-15


def test_adam_zero_gradient():
    p = {"w": Tensor(np.array([0.5, -0.5]))}
    state = AdamState()
    adam_step(p, {"w": np.zeros(2)}, state, lr=0.1)
    assert np.array_equal(p["w"].data, [0.5, -0.5])

    adam_step(p, {"w": np.array([1.0, -1.0])}, state, lr=0.1)
    m, v = state.m["w"].copy(), state.v["w"].copy()
    adam_step(p, {"w": np.zeros(2)}, state, lr=0.1)
    assert np.array_equal(state.m["w"], 0.9 * m)
    assert np.array_equal(state.v["w"], 0.999 * v)


def test_adam_rejects_non_finite_gradient():
    p = {"layer.W": Tensor(np.ones(2))}
    with pytest.raises(NumericError, match="layer.W"):
        adam_step(p, {"layer.W": np.array([1.0, np.nan])}, AdamState(), lr=0.1)


# ---------------------------------------------------------------- metrics


def test_oracle_logits_score_perfectly(small_sets):
    _, val = small_sets
    qa = np.array([np.eye(4)[d.answer_label] for d in val])
    qar = np.array([np.eye(4)[d.rationale_label] for d in val])
    m = metrics_from_outputs(qa, qar, val)
    assert (m["acc_q2a"], m["acc_qa2r"], m["acc_q2ar"]) == (1.0, 1.0, 1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_joint_accuracy_never_exceeds_either(seed):
    rng = np.random.default_rng(seed)
    data = generate(GenConfig(seed=seed, count=30))
    m = metrics_from_outputs(rng.normal(size=(30, 4)), rng.normal(size=(30, 4)), data)
    assert m["acc_q2ar"] <= min(m["acc_q2a"], m["acc_qa2r"])


def test_evaluate_fields_and_ranges(small_sets):
    _, val = small_sets
    model = harness.build_model("vanilla", TINY, seed=0)
    m = evaluate(model, val)
    for k in ("acc_q2a", "acc_qa2r", "acc_q2ar", "gold_similarity",
              "evidence_mass_qa", "evidence_mass_qar"):
        assert 0.0 <= m[k] <= 1.0
    with pytest.raises(ContractError):
        evaluate(model, [])


def test_histogram_rows():
    rows = histogram_rows(np.ones(5), 10)
    assert [r[2] for r in rows] == [0] * 9 + [5]
    assert rows[0][:2] == (0.0, 0.1) and rows[-1][1] == 1.0
    vals = np.random.default_rng(0).uniform(size=123)
    assert sum(r[2] for r in histogram_rows(vals, 7)) == 123


def test_similarity_histogram_partitions_dataset(small_sets):
    _, val = small_sets
    model = harness.build_model("transformer", {"n_layers": 1, "d_model": 8, "d_ff": 8}, 0)
    rows = similarity_histogram(model, val, bins=4)
    assert len(rows) == 4 and sum(r[2] for r in rows) == len(val)
    with pytest.raises(ContractError):
        similarity_histogram(model, val, bins=1)


# ---------------------------------------------------------------- configuration


def test_config_round_trip_and_lambda_alias():
    cfg = TrainConfig.from_dict({"lambda": 0.4, "align_mode": "rank", "epochs": 3})
    assert cfg.lam == 0.4 and cfg.align.mode == "rank"
    assert TrainConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("bad", [
    {"lambda": -1.0}, {"batch_size": 0}, {"variant": "lstm"}, {"align_mode": "cos"},
    {"learning_rate": 0.1}, {"lr": 0.0},
])
def test_bad_configs(bad):
    with pytest.raises(ConfigError):
        TrainConfig.from_dict(bad)


def test_mode_none_forces_lambda_zero():
    assert TrainConfig.from_dict({"align_mode": "none", "lambda": 2.0}).lam == 0.0


# ---------------------------------------------------------------- training


def test_train_is_deterministic(small_sets):
    tr, val = small_sets
    a, _, _ = train(tiny_config(), tr, val)
    b, _, _ = train(tiny_config(), tr, val)
    assert a.to_csv() == b.to_csv()
    assert len(a.records) == 2
    assert all(r.acc_q2ar <= min(r.acc_q2a, r.acc_qa2r) for r in a.records)


def test_report_csv_layout(small_sets):
    tr, val = small_sets
    rep, _, _ = train(tiny_config(epochs=1), tr, val)
    header = rep.to_csv().splitlines()[0].split(",")
    assert header[:4] == ["epoch", "loss_qa", "loss_qar", "loss_align"]
    assert "seconds" not in header
    assert rep.to_csv(include_timing=True).splitlines()[0].endswith(",seconds")


def test_mode_none_and_zero_lambda_trajectories_match(small_sets):
    tr, val = small_sets
    snaps = []
    for mode in ("none", "dot"):
        _, model, _ = train(tiny_config(align_mode=mode, **{"lambda": 0.0}), tr, val,
                            max_steps=6)
        snaps.append(model.params.snapshot())
    assert all(np.array_equal(snaps[0][k], snaps[1][k]) for k in snaps[0])


def test_numeric_failure_keeps_last_checkpoint(small_sets, tmp_path, monkeypatch):
    tr, val = small_sets
    real = harness.training_step
    calls = []

    def flaky(*args, **kw):
        calls.append(1)
        if len(calls) == 4:
            raise NumericError("non-finite training loss")
        return real(*args, **kw)

    monkeypatch.setattr(harness, "training_step", flaky)
    ckpt = tmp_path / "last.json"
    with pytest.raises(NumericError):
        train(tiny_config(checkpoint=str(ckpt)), tr, val)
    model, state, doc = load_checkpoint(ckpt)
    assert doc["epoch"] == 1 and state.step == 3


def test_checkpoint_round_trip_is_bit_exact(small_sets, tmp_path):
    tr, val = small_sets
    for variant, mc in (("vanilla", TINY), ("transformer", {"n_layers": 1, "d_model": 8})):
        _, model, state = train(tiny_config(variant=variant, model=mc, epochs=1), tr, val)
        path = tmp_path / f"{variant}.json"
        save_checkpoint(path, model, state, epoch=1)
        back, bstate, doc = load_checkpoint(path)
        assert doc["variant"] == variant and bstate.step == state.step
        for k in model.params.names():
            assert np.array_equal(model.params[k].data, back.params[k].data)
            assert np.array_equal(state.m[k], bstate.m[k])
        assert evaluate(model, val) == evaluate(back, val)


def test_lambda_sweep_one_row_per_weight(small_sets):
    tr, val = small_sets
    rows = lambda_sweep(tiny_config(epochs=1), [0.0, 0.5], tr, val)
    assert [r[0] for r in rows] == [0.0, 0.5] and all(len(r) == 7 for r in rows)


# ---------------------------------------------------------------- command line


def write_small_files(tmp_path, **cfg):
    write_dataset(tmp_path / "train.jsonl", GenConfig(seed=1, count=24))
    write_dataset(tmp_path / "val.jsonl", GenConfig(seed=2, count=12))
    doc = {"epochs": 1, "batch_size": 8, "model": TINY,
           "train_data": str(tmp_path / "train.jsonl"), "val_data": str(tmp_path / "val.jsonl")}
    doc.update(cfg)
    (tmp_path / "run.json").write_text(json.dumps(doc))
    return tmp_path / "run.json"


def test_cli_gen_data(tmp_path):
    out = tmp_path / "d.jsonl"
    assert cli.main(["gen-data", "--seed", "42", "--count", "7", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 7
    assert cli.main(["gen-data", "--n-objects", "12", "--out", str(out)]) == 1


def test_cli_train_eval_hist(tmp_path, capsys):
    cfg = write_small_files(tmp_path, checkpoint=str(tmp_path / "m.json"))
    assert cli.main(["train", "--config", str(cfg)]) == 0
    assert capsys.readouterr().out.startswith("epoch,loss_qa")
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "m.json"),
                     "--data", str(tmp_path / "val.jsonl")]) == 0
    assert capsys.readouterr().out.startswith("acc_q2a,acc_qa2r,acc_q2ar")
    hist = tmp_path / "h.csv"
    assert cli.main(["hist", "--checkpoint", str(tmp_path / "m.json"), "--data",
                     str(tmp_path / "val.jsonl"), "--bins", "5", "--out", str(hist)]) == 0
    lines = hist.read_text().splitlines()
    assert lines[0] == "bin_low,bin_high,count" and sum(int(l.split(",")[2]) for l in lines[1:]) == 12


def test_cli_sweep(tmp_path, capsys):
    cfg = write_small_files(tmp_path)
    assert cli.main(["sweep", "--config", str(cfg), "--lambdas", "0,1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("lambda,") and len(lines) == 3
    assert cli.main(["sweep", "--config", str(cfg), "--lambdas", "a,b"]) == 1


def test_cli_input_errors_exit_one(tmp_path):
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "missing.json"),
                     "--data", str(tmp_path / "missing.jsonl")]) == 1
    (tmp_path / "bad.json").write_text("{not json")
    assert cli.main(["train", "--config", str(tmp_path / "bad.json")]) == 1
    (tmp_path / "unknown.json").write_text(json.dumps({"colour": 1}))
    assert cli.main(["train", "--config", str(tmp_path / "unknown.json")]) == 1


def test_cli_numeric_failure_exits_two(tmp_path, monkeypatch):
    cfg = write_small_files(tmp_path)

    def boom(*a, **k):
        raise NumericError("non-finite training loss")

    monkeypatch.setattr(cli, "train", boom)
    assert cli.main(["train", "--config", str(cfg)]) == 2


def test_cli_gradcheck_exit_codes(monkeypatch, capsys):
    monkeypatch.setattr(cli, "op_suite", lambda points, seed: [CheckResult("add", 1e-9, "")])
    monkeypatch.setattr(cli, "model_suite",
                        lambda v, points, seed: CheckResult(f"joint_{v}", 1e-8, ""))
    assert cli.main(["gradcheck"]) == 0
    monkeypatch.setattr(cli, "model_suite",
                        lambda v, points, seed: CheckResult(f"joint_{v}", 3e-2, "x"))
    assert cli.main(["gradcheck", "--variant", "vanilla"]) == 2
    assert "FAIL" in capsys.readouterr().out


def test_cli_gradcheck_real_run():
    assert cli.main(["gradcheck", "--variant", "vanilla", "--points", "1"]) == 0


def test_initial_model_is_where_training_starts(small_sets):
    tr, val = small_sets
    cfg = tiny_config(epochs=0)
    _, trained, _ = train(cfg, tr, val)
    start = harness.initial_model(cfg)
    assert all(np.array_equal(start.params[k].data, trained.params[k].data)
               for k in start.params)
