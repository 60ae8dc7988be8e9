"""Training loop: clip sampling, optimization, checkpoints, loss curves."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ModelConfig, RunConfig
from .errors import ConfigError, NonFiniteError
from .infer import evaluate_model_on_samples
from .losses import exhaustive_costs, total_loss
from .model import build_model
from .nn import Adam, load_checkpoint, save_checkpoint


def effective_model_config(run_cfg: RunConfig) -> ModelConfig:
    """Model config with ablation toggles folded into the loss weights."""
    cfg = ModelConfig(**run_cfg.model.__dict__)
    if not run_cfg.span_enabled:
        cfg.w_span = 0.0
    if not run_cfg.rel_enabled:
        cfg.w_rel = 0.0
    return cfg


@dataclass
class TrainResult:
    steps_run: int
    initial_loss: float
    final_loss: float
    curve: list = field(default_factory=list)   # rows of (step, lr, total, components...)
    checkpoint: str = ""
    stopped_early: bool = False


class Trainer:
    """Minimizes the weighted objective over random clips of the dataset.

    Reproducible from (config, seed): weights, data order, and optimizer
    state all derive from the seed.  In assertion mode every step checks the
    production query matching against an exhaustive numpy enumeration.
    """

    def __init__(self, run_cfg: RunConfig, samples, assert_matching=True):
        run_cfg.validate()
        if not samples:
            raise ConfigError("training needs at least one sample")
        t_min = min(s.gt.num_frames for s in samples)
        if run_cfg.t_train > t_min:
            raise ConfigError(f"t_train={run_cfg.t_train} exceeds shortest video ({t_min})")
        self.run_cfg = run_cfg
        self.cfg = effective_model_config(run_cfg)
        self.samples = list(samples)
        self.assert_matching = assert_matching
        self.model = build_model(self.cfg, seed=run_cfg.seed, precision=run_cfg.precision)
        decay_at = max(1, int(run_cfg.decay_fraction * run_cfg.steps)) if run_cfg.steps else None
        self.optimizer = Adam(self.model.parameters(), lr=run_cfg.learning_rate,
                              decay_step=decay_at)
        self.data_rng = np.random.default_rng(np.random.SeedSequence([run_cfg.seed, 1]))

    def _next_clip(self):
        idx = int(self.data_rng.integers(len(self.samples)))
        sample = self.samples[idx]
        t = sample.gt.num_frames
        window = self.run_cfg.t_train
        start = int(self.data_rng.integers(t - window + 1))
        frames = sample.frames[start:start + window]
        # a clip supervises only the envelope boundaries it actually shows;
        # a boundary cut off by the window has no valid span target
        env = sample.gt.span_envelope
        if env is None:
            boundaries = (True, True)
        else:
            boundaries = (env[0] >= start, env[1] < start + window)
        return sample, frames, sample.gt.clip(start, start + window), boundaries

    def train_step(self):
        sample, frames, gt, span_boundaries = self._next_clip()
        self.model.zero_grad()
        pred = self.model(frames, sample.query_ids)
        breakdown = total_loss(pred, gt, self.cfg, span_boundaries=span_boundaries)
        if self.assert_matching:
            costs = exhaustive_costs(pred, gt, self.cfg)
            brute = int(np.argmin(costs))
            j = breakdown.query_index
            # equal, or a tie at the working precision (f32 graphs vs f64 oracle)
            tol = 1e-5 if self.model.dtype == np.float32 else 1e-10
            if j != brute and costs[j] - costs[brute] > tol * max(1.0, abs(costs[brute])):
                raise AssertionError(
                    f"matching mismatch: production {j} (cost {costs[j]:.8f}), "
                    f"exhaustive {brute} (cost {costs[brute]:.8f})")
        breakdown.tensor.backward()
        self.optimizer.step()
        return breakdown

    def train(self, out_dir=None, log=print):
        run = self.run_cfg
        out = Path(out_dir) if out_dir else None
        if out:
            out.mkdir(parents=True, exist_ok=True)
        curve = []
        initial = final = float("nan")
        stopped = False
        for step in range(run.steps):
            try:
                b = self.train_step()
            except NonFiniteError as e:
                raise NonFiniteError(f"step {step}: {e}") from e
            row = (step, self.optimizer.current_lr(), b.total,
                   b.cls, b.box, b.mask, b.span, b.rel)
            curve.append(row)
            if step == 0:
                initial = b.total
            final = b.total
            if log and run.log_every and step % run.log_every == 0:
                log(f"step {step:5d}  lr {row[1]:.2e}  loss {b.total:8.4f}  "
                    f"cls {b.cls:.4f} box {b.box:.4f} mask {b.mask:.4f} "
                    f"span {b.span:.4f} rel {b.rel:.4f}")
            if (run.eval_every and run.target_jf > 0
                    and step > 0 and step % run.eval_every == 0):
                report = evaluate_model_on_samples(
                    self.model, self.samples,
                    force_full_span=not run.span_enabled)
                jf = report.overall["jf"]
                ti = report.overall["tiou"]
                if log:
                    log(f"step {step:5d}  train-set J&F {jf:.3f}  tIoU {ti:.3f}")
                if jf >= run.target_jf and ti >= run.target_tiou:
                    stopped = True
                    break
        ckpt_path = ""
        if out:
            ckpt_path = str(out / "checkpoint.npz")
            save_checkpoint(ckpt_path, self.model, run.to_dict())
            with open(out / "loss_curve.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["step", "lr", "total", "cls", "box", "mask",
                                 "span", "rel"])
                writer.writerows(curve)
            run.save(out / "run_config.json")
        return TrainResult(steps_run=len(curve), initial_loss=initial,
                           final_loss=final, curve=curve, checkpoint=ckpt_path,
                           stopped_early=stopped)


def load_model(checkpoint_path):
    """Rebuild a model (and its RunConfig) from a checkpoint file."""
    state, config_dict = load_checkpoint(checkpoint_path)
    run_cfg = RunConfig.from_dict(config_dict)
    model = build_model(effective_model_config(run_cfg), seed=run_cfg.seed,
                        precision=run_cfg.precision)
    model.load_state_dict(state)
    return model, run_cfg
