"""Trainer behavior and the command-line pipeline."""

import json

import numpy as np
import pytest

from spanvos import cli
from spanvos.config import ModelConfig, RunConfig
from spanvos.data import (
    PredictionRecord,
    read_dataset,
    read_predictions,
    write_predictions,
)
from spanvos.errors import NonFiniteError
from spanvos.infer import evaluate_records, run_inference
from spanvos.synth import GenConfig, generate_sample
from spanvos.train import Trainer, load_model

MC = ModelConfig(num_scales=3, embed_dim=16, num_queries=3, vocab_size=28,
                 fpn_channels=8, mask_channels=4, head_hidden=16,
                 controller_hidden=16, ffn_dim=32)
GEN = GenConfig(num_frames=12, height=32, width=32, num_distractors=1,
                num_segments=1, scene_cuts=1)


def _run(**kw):
    base = dict(seed=0, steps=5, learning_rate=1e-4, t_train=8,
                precision="f64", log_every=0, model=ModelConfig(**MC.__dict__))
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def samples():
    return [generate_sample(s, GEN) for s in (0, 1)]


def test_zero_steps_checkpoint_equals_initialization(tmp_path, samples):
    run = _run(steps=0)
    trainer = Trainer(run, samples)
    init_state = {k: v.copy() for k, v in trainer.model.state_dict().items()}
    result = trainer.train(out_dir=tmp_path)
    assert result.steps_run == 0
    model, _ = load_model(result.checkpoint)
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(v, init_state[k])


def test_same_seed_identical_loss_curves(samples):
    r1 = Trainer(_run(), samples).train(log=None)
    r2 = Trainer(_run(), samples).train(log=None)
    assert r1.curve == r2.curve  # bit-identical at double precision


def test_different_seed_differs(samples):
    r1 = Trainer(_run(), samples).train(log=None)
    r2 = Trainer(_run(seed=1), samples).train(log=None)
    assert r1.curve != r2.curve


def test_overfit_single_sample_reaches_tenth_of_initial_loss():
    sample = generate_sample(5, GEN)
    wide = ModelConfig(**{**MC.__dict__, "embed_dim": 32, "fpn_channels": 16,
                          "mask_channels": 8, "head_hidden": 32,
                          "controller_hidden": 32, "ffn_dim": 64})
    run = _run(steps=350, learning_rate=5e-4, t_train=12, precision="f32",
               log_every=0, model=wide)
    result = Trainer(run, [sample]).train(log=None)
    assert result.final_loss < 0.1 * result.initial_loss


def test_matching_assertion_runs_every_step(samples):
    trainer = Trainer(_run(steps=3), samples, assert_matching=True)
    trainer.train(log=None)  # would raise on any mismatch


def test_nonfinite_abort_reports_step(samples, monkeypatch):
    trainer = Trainer(_run(steps=10), samples)

    def explode():
        raise NonFiniteError("boom")

    monkeypatch.setattr(trainer, "train_step", explode)
    with pytest.raises(NonFiniteError, match="step 0"):
        trainer.train(log=None)


def test_loss_curve_file_and_config_written(tmp_path, samples):
    run = _run(steps=3)
    Trainer(run, samples).train(out_dir=tmp_path, log=None)
    curve = (tmp_path / "loss_curve.csv").read_text().splitlines()
    assert curve[0].startswith("step,lr,total")
    assert len(curve) == 4
    reloaded = RunConfig.load(tmp_path / "run_config.json")
    assert reloaded.steps == 3 and reloaded.precision == "f64"


# ---------------------------------------------------------------- CLI


def test_cli_gen_stats_roundtrip(tmp_path, capsys):
    ds = tmp_path / "ds"
    rc = cli.main(["gen", "--out", str(ds), "--seed", "3", "--count", "2",
                   "--frames", "12", "--size", "32", "--scene-cuts", "1"])
    assert rc == 0
    samples, manifest = read_dataset(ds)
    assert len(samples) == 2 and manifest.fps == 6.0
    assert cli.main(["stats", "--dataset", str(ds),
                     "--out", str(tmp_path / "stats.json")]) == 0
    stats = json.loads((tmp_path / "stats.json").read_text())
    assert stats["videos"] == 2
    out = capsys.readouterr().out
    assert "scenes per video" in out


def test_cli_gen_ti_suite(tmp_path):
    ds = tmp_path / "suite"
    rc = cli.main(["gen", "--out", str(ds), "--ti-suite", "0,0.5,1.0",
                   "--frames", "12", "--size", "32", "--scene-cuts", "0"])
    assert rc == 0
    samples, _ = read_dataset(ds)
    assert [round(s.ti, 2) for s in samples] == [0.0, 0.5, 1.0]


def test_cli_full_pipeline(tmp_path, capsys):
    ds = tmp_path / "ds"
    assert cli.main(["gen", "--out", str(ds), "--seed", "1", "--count", "1",
                     "--frames", "12", "--size", "32", "--scene-cuts", "0"]) == 0
    run_dir = tmp_path / "run"
    cfg_path = tmp_path / "cfg.json"
    _run(steps=2, precision="f32").save(cfg_path)
    assert cli.main(["train", "--dataset", str(ds), "--out", str(run_dir),
                     "--config", str(cfg_path)]) == 0
    ckpt = run_dir / "checkpoint.npz"
    assert ckpt.exists()
    preds = tmp_path / "preds.json"
    assert cli.main(["infer", "--checkpoint", str(ckpt), "--dataset", str(ds),
                     "--out", str(preds)]) == 0
    report_path = tmp_path / "report.json"
    assert cli.main(["eval", "--predictions", str(preds), "--dataset", str(ds),
                     "--out", str(report_path)]) == 0
    report = json.loads(report_path.read_text())
    assert "overall" in report and "buckets" in report
    assert "tIoU" in capsys.readouterr().out


def test_cli_eval_oracle_predictions_scores_one(tmp_path):
    ds = tmp_path / "ds"
    cli.main(["gen", "--out", str(ds), "--seed", "9", "--count", "2",
              "--frames", "12", "--size", "32", "--scene-cuts", "0"])
    samples, _ = read_dataset(ds)
    records = []
    for s in samples:
        env = s.gt.span_envelope
        records.append(PredictionRecord(
            sample_id=s.sample_id, query_index=0, span=env, score=1.0,
            masks=s.gt.masks.astype(bool)))
    preds = tmp_path / "oracle.json"
    write_predictions(preds, records)
    records_back, _ = read_predictions(preds)
    report = evaluate_records(records_back, samples)
    assert report.overall["j"] == 1.0
    assert report.overall["f"] == 1.0
    assert report.overall["jf"] == 1.0
    assert report.overall["tiou"] == 1.0


def test_cli_infer_no_span_gives_linear_tiou(tmp_path):
    # with the span head disabled, per-video tIoU is exactly 1 - TI
    ds = tmp_path / "suite"
    cli.main(["gen", "--out", str(ds), "--ti-suite", "0,0.25,0.5,0.75",
              "--frames", "16", "--size", "32", "--scene-cuts", "0", "--seed", "2"])
    samples, _ = read_dataset(ds)
    run = _run(steps=1, precision="f32", t_train=8)
    trainer = Trainer(run, samples)
    trainer.train(log=None)
    records = run_inference(trainer.model, samples, force_full_span=True)
    report = evaluate_records(records, samples)
    for m in report.per_expression:
        assert m.tiou == 1.0 - m.ti


def test_cli_exit_code_config_error(tmp_path):
    rc = cli.main(["gen", "--out", str(tmp_path / "x"), "--frames", "4"])
    assert rc == 2


def test_cli_exit_code_data_error(tmp_path):
    rc = cli.main(["stats", "--dataset", str(tmp_path / "missing")])
    assert rc == 3


def test_cli_exit_code_numeric_failure(tmp_path, monkeypatch):
    ds = tmp_path / "ds"
    cli.main(["gen", "--out", str(ds), "--count", "1", "--frames", "12",
              "--size", "32", "--scene-cuts", "0"])

    def explode(self, out_dir=None, log=print):
        raise NonFiniteError("step 7: non-finite values produced by 'exp'")

    monkeypatch.setattr(cli.Trainer, "train", explode)
    rc = cli.main(["train", "--dataset", str(ds), "--out", str(tmp_path / "run"),
                   "--steps", "1", "--t-train", "8"])
    assert rc == 4
