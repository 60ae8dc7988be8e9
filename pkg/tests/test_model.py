"""End-to-end model forward: shapes, equivariance, determinism, gradients."""

import numpy as np
import pytest

from spanvos import autodiff as ad
from spanvos.config import ModelConfig
from spanvos.model import build_model
from spanvos.nn import load_checkpoint, save_checkpoint
from spanvos.synth import GenConfig, generate_sample

CFG = ModelConfig(num_scales=3, embed_dim=16, num_queries=3, vocab_size=28,
                  fpn_channels=8, mask_channels=4, head_hidden=16,
                  controller_hidden=16, ffn_dim=32)
GEN = GenConfig(num_frames=8, height=32, width=32, num_distractors=1,
                num_segments=1, scene_cuts=0)


@pytest.fixture(scope="module")
def sample():
    return generate_sample(3, GEN)


def test_forward_shapes(sample):
    model = build_model(CFG, seed=0)
    pred = model(sample.frames, sample.query_ids)
    t, h, w = 8, 32, 32
    assert pred.mask_logits.shape == (3, t, h, w)
    assert pred.boxes.shape == (3, t, 4)
    assert pred.span_start.shape == pred.span_end.shape == (3, t)
    assert pred.seq_align.shape == (3,)
    assert pred.relevance.shape == (3, t)
    assert ((pred.boxes.data >= 0) & (pred.boxes.data <= 1)).all()


def test_forward_deterministic(sample):
    a = build_model(CFG, seed=7)(sample.frames, sample.query_ids)
    b = build_model(CFG, seed=7)(sample.frames, sample.query_ids)
    np.testing.assert_array_equal(a.mask_logits.data, b.mask_logits.data)
    np.testing.assert_array_equal(a.seq_align.data, b.seq_align.data)


def test_query_offset_permutation_equivariance(sample):
    model = build_model(CFG, seed=1)
    base = model(sample.frames, sample.query_ids)
    perm = np.array([2, 0, 1])
    model.query_builder.offsets.data = model.query_builder.offsets.data[perm]
    permuted = model(sample.frames, sample.query_ids)
    np.testing.assert_allclose(permuted.mask_logits.data,
                               base.mask_logits.data[perm], rtol=1e-9)
    np.testing.assert_allclose(permuted.boxes.data, base.boxes.data[perm], rtol=1e-9)
    np.testing.assert_allclose(permuted.seq_align.data,
                               base.seq_align.data[perm], rtol=1e-9)
    np.testing.assert_allclose(permuted.relevance.data,
                               base.relevance.data[perm], rtol=1e-9)


def test_f32_build_produces_f32(sample):
    model = build_model(CFG, seed=0, precision="f32")
    pred = model(sample.frames, sample.query_ids)
    assert pred.mask_logits.dtype == np.float32
    assert model.dtype == np.float32


def test_gradients_reach_every_parameter(sample):
    model = build_model(CFG, seed=2)
    pred = model(sample.frames, sample.query_ids)
    loss = ad.sum_(ad.sigmoid(pred.mask_logits)).mean()
    for tname in ("boxes", "span_start", "seq_align", "relevance"):
        loss = ad.add(loss, ad.sum_(getattr(pred, tname)))
    loss.backward()
    missing = [n for n, p in model.named_parameters() if p.grad is None]
    assert not missing, f"no gradient for: {missing}"
    for n, p in model.named_parameters():
        assert np.isfinite(p.grad).all(), n


def test_checkpoint_roundtrip_identical_outputs(tmp_path, sample):
    model = build_model(CFG, seed=4)
    pred = model(sample.frames, sample.query_ids)
    save_checkpoint(tmp_path / "m.npz", model, {"note": "test"})
    state, config = load_checkpoint(tmp_path / "m.npz")
    assert config == {"note": "test"}
    clone = build_model(CFG, seed=999)   # different init, then overwritten
    clone.load_state_dict(state)
    pred2 = clone(sample.frames, sample.query_ids)
    np.testing.assert_array_equal(pred.mask_logits.data, pred2.mask_logits.data)


def test_coupled_srd_variant_runs(sample):
    cfg = ModelConfig(**{**CFG.__dict__, "coupled_srd": True})
    pred = build_model(cfg, seed=0)(sample.frames, sample.query_ids)
    assert pred.mask_logits.shape == (3, 8, 32, 32)
