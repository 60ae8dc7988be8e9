"""Inference over datasets and train-set evaluation helpers."""

from __future__ import annotations

from . import autodiff as ad
from .data import PredictionRecord
from .metrics import evaluate_many, grouped_report
from .temporal import assemble


def predict_sample(model, sample, force_full_span=False):
    """Full-video forward pass and span-gated assembly (no gradients)."""
    with ad.no_grad():
        pred = model(sample.frames, sample.query_ids)
    return assemble(pred, force_full_span=force_full_span)


def run_inference(model, samples, force_full_span=False):
    """FinalOutputs serialized as PredictionRecords, one per sample."""
    records = []
    for sample in samples:
        out = predict_sample(model, sample, force_full_span=force_full_span)
        records.append(PredictionRecord(
            sample_id=sample.sample_id,
            query_index=out.query_index,
            span=out.span,
            score=out.score,
            masks=out.masks,
            relevance=[float(v) for v in out.relevance]))
    return records


def evaluate_records(records, samples, max_workers=4):
    """Score serialized predictions against a dataset, TI-bucketed."""
    by_id = {s.sample_id: s for s in samples}
    pairs = []
    for rec in records:
        sample = by_id.get(rec.sample_id)
        if sample is None:
            raise KeyError(f"prediction for unknown sample {rec.sample_id!r}")
        pairs.append((rec, sample.gt, rec.sample_id))
    return grouped_report(evaluate_many(pairs, max_workers=max_workers))


def evaluate_model_on_samples(model, samples, force_full_span=False):
    """Inference plus scoring in one go (train-set monitoring)."""
    records = run_inference(model, samples, force_full_span=force_full_span)
    return evaluate_records(records, samples)
