"""Loss components against hand-computed and brute-force oracles."""

import math
from types import SimpleNamespace

import numpy as np
import pytest

from spanvos import autodiff as ad
from spanvos.autodiff import Tensor
from spanvos.config import ModelConfig
from spanvos.errors import InvalidSpanError
from spanvos.losses import (
    GroundTruth,
    box_loss,
    dice_loss,
    focal_loss,
    gaussian_span_target,
    generalized_iou,
    kl_span_loss,
    mask_focal_loss,
    match_query,
    query_costs,
    total_loss,
)


def t(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


# ---------------------------------------------------------------- focal


def test_focal_perfect_prediction_is_tiny():
    assert focal_loss(t([1.0 - 1e-7]), np.ones(1)).item() < 1e-12


def test_focal_closed_form_half_probability():
    # -0.25 * (1-0.5)^2 * log(0.5) = 0.25 * 0.25 * ln 2
    expected = 0.25 * 0.25 * math.log(2.0)
    got = focal_loss(t([0.5]), np.ones(1), alpha=0.25, gamma=2.0).item()
    assert abs(got - expected) < 1e-12


def test_focal_gamma_zero_reduces_to_scaled_cross_entropy(rng):
    p = rng.uniform(0.05, 0.95, size=12)
    y = (rng.random(12) > 0.5).astype(np.float64)
    got = focal_loss(t(p), y, alpha=0.5, gamma=0.0).item()
    # independent cross-entropy oracle
    ce = -(y * np.log(p) + (1 - y) * np.log(1 - p)).mean()
    assert abs(got - 0.5 * ce) < 1e-10


def test_focal_gradient(rng):
    y = (rng.random(8) > 0.5).astype(np.float64)
    x = t(rng.uniform(0.1, 0.9, size=8))
    assert ad.grad_check(lambda p: focal_loss(p, y), [x]) < 1e-5


# ---------------------------------------------------------------- dice / mask focal


def _logits_for(mask, scale=12.0):
    return (np.asarray(mask, dtype=np.float64) * 2 - 1) * scale


def test_dice_equal_masks_near_zero(rng):
    g = (rng.random((2, 8, 8)) > 0.5).astype(np.float64)
    assert dice_loss(t(_logits_for(g)), g).item() < 1e-3


def test_dice_disjoint_masks_near_one():
    g = np.zeros((1, 4, 4))
    g[0, :2] = 1
    p = 1 - g
    assert dice_loss(t(_logits_for(p)), g).item() > 0.999


def test_dice_half_overlap_equal_area():
    # prediction and gt each cover 8 pixels, overlapping on 4 -> 1 - 2*4/16 = 0.5
    g = np.zeros((1, 4, 4))
    g[0, :, :2] = 1
    p = np.zeros((1, 4, 4))
    p[0, :, 1:3] = 1
    got = dice_loss(t(_logits_for(p, scale=30.0)), g).item()
    assert abs(got - 0.5) < 1e-3


def test_dice_and_mask_focal_gradients(rng):
    g = (rng.random((2, 5, 5)) > 0.5).astype(np.float64)
    x = t(rng.normal(size=(2, 5, 5)))
    assert ad.grad_check(lambda v: dice_loss(v, g), [x]) < 1e-5
    assert ad.grad_check(lambda v: mask_focal_loss(v, g), [x]) < 1e-5


# ---------------------------------------------------------------- boxes


def test_box_loss_identical_is_zero(rng):
    # zero up to the division-guard epsilons inside gIoU
    b = rng.uniform(0.3, 0.6, size=(3, 4))
    assert box_loss(t(b), b).item() < 1e-6


def test_giou_hand_geometry():
    # corner form [0,0,1,1] vs [1,1,2,2]: IoU 0, enclose 4, union 2 -> gIoU -0.5
    pred = np.array([[0.5, 0.5, 1.0, 1.0]])   # center form of [0,0,1,1]
    gt = np.array([[1.5, 1.5, 1.0, 1.0]])     # center form of [1,1,2,2]
    giou = generalized_iou(t(pred), gt).item()
    assert abs(giou - (-0.5)) < 1e-9
    # the (1 - gIoU) loss term is then 1.5
    l1 = np.abs(pred - gt).mean()
    got = box_loss(t(pred), gt).item()
    assert abs(got - (l1 + 1.5)) < 1e-9


def test_giou_nested_half_area_matches_raster_oracle():
    # nested boxes, inner has half the outer area; edges on a 0.01 grid so the
    # rasterized IoU below is exact
    outer = np.array([[0.5, 0.5, 0.4, 0.4]])
    inner = np.array([[0.5, 0.5, 0.4, 0.2]])

    def rasterize(b):
        grid = np.zeros((100, 100), dtype=bool)
        cx, cy, w, h = b[0]
        x1, x2 = int(round((cx - w / 2) * 100)), int(round((cx + w / 2) * 100))
        y1, y2 = int(round((cy - h / 2) * 100)), int(round((cy + h / 2) * 100))
        grid[y1:y2, x1:x2] = True
        return grid

    a, b = rasterize(inner), rasterize(outer)
    raster_iou = (a & b).sum() / (a | b).sum()
    assert abs(raster_iou - 0.5) < 1e-12
    # nested: enclosing box equals outer, so gIoU == IoU
    giou = generalized_iou(t(inner), outer).item()
    assert abs(giou - raster_iou) < 1e-6


def test_box_loss_gradient(rng):
    gt = rng.uniform(0.3, 0.7, size=(3, 4))
    x = t(rng.uniform(0.2, 0.8, size=(3, 4)))
    assert ad.grad_check(lambda v: box_loss(v, gt), [x]) < 1e-5


# ---------------------------------------------------------------- span targets / KL


def test_gaussian_target_tiny_sigma_is_one_hot():
    ts, te = gaussian_span_target(3, 9, 16, sigma_frac=1e-9, sigma_min=1e-6)
    np.testing.assert_allclose(ts, np.eye(16)[3], atol=1e-300)
    np.testing.assert_allclose(te, np.eye(16)[9], atol=1e-300)


def test_gaussian_target_symmetry():
    ts, _ = gaussian_span_target(8, 12, 17, sigma_frac=0.3)
    np.testing.assert_allclose(ts, ts[::-1], rtol=1e-12)  # centered at T//2


def test_gaussian_target_matches_scalar_oracle():
    got, _ = gaussian_span_target(2, 2, 8, sigma_frac=0.05, sigma_min=1.0)
    raw = [math.exp(-0.5 * (t_ - 2) ** 2) for t_ in range(8)]  # sigma = 1
    expected = [v / sum(raw) for v in raw]
    np.testing.assert_allclose(got, expected, rtol=1e-12)
    assert abs(got.sum() - 1.0) < 1e-12


def test_gaussian_target_rejects_reversed_span():
    with pytest.raises(InvalidSpanError):
        gaussian_span_target(5, 3, 10, sigma_frac=0.05)


def test_kl_zero_when_prediction_equals_target():
    ts, te = gaussian_span_target(2, 6, 10, sigma_frac=0.2)
    loss = kl_span_loss(t(np.log(ts)), t(np.log(te)), ts, te)
    assert abs(loss.item()) < 1e-10


def test_kl_uniform_vs_uniform_is_zero():
    u = np.full(10, 0.1)
    loss = kl_span_loss(t(np.zeros(10)), t(np.zeros(10)), u, u)
    assert abs(loss.item()) < 1e-12


def test_kl_one_hot_target_vs_uniform_closed_form():
    one_hot = np.eye(10)[4]
    loss = kl_span_loss(t(np.zeros(10)), t(np.zeros(10)), one_hot, one_hot)
    # each term contributes ln 10
    assert abs(loss.item() - 2 * math.log(10)) < 1e-12


def test_kl_gradient(rng):
    ts, te = gaussian_span_target(1, 5, 8, sigma_frac=0.2)
    s = t(rng.normal(size=8))
    e = t(rng.normal(size=8))
    assert ad.grad_check(lambda a, b: kl_span_loss(a, b, ts, te), [s, e]) < 1e-5


def test_kl_boundary_terms_are_additive(rng):
    ts, te = gaussian_span_target(2, 6, 10, sigma_frac=0.2)
    s = t(rng.normal(size=10))
    e = t(rng.normal(size=10))
    both = kl_span_loss(s, e, ts, te).item()
    start_only = kl_span_loss(s, e, ts, te, include_end=False).item()
    end_only = kl_span_loss(s, e, ts, te, include_start=False).item()
    assert abs(both - (start_only + end_only)) < 1e-12
    assert kl_span_loss(s, e, ts, te, include_start=False,
                        include_end=False).item() == 0.0


# ---------------------------------------------------------------- ground truth


def _make_gt(T=6, H=8, W=8, segments=((1, 4),), rng=None):
    masks = np.zeros((T, H, W), dtype=np.uint8)
    boxes = np.zeros((T, 4))
    for s, e in segments:
        for f in range(s, e):
            masks[f, 2:5, 3:6] = 1
            boxes[f] = [4.5 / W, 3.5 / H, 3 / W, 3 / H]
    return GroundTruth(masks=masks, boxes=boxes, segments=list(segments))


def test_ground_truth_relevance_matches_masks():
    gt = _make_gt(segments=[(1, 3), (4, 6)])
    np.testing.assert_array_equal(gt.relevance, [0, 1, 1, 0, 1, 1])
    assert gt.span_envelope == (1, 5)


def test_ground_truth_rejects_inconsistent_segments():
    masks = np.zeros((4, 4, 4), dtype=np.uint8)
    masks[0, 1, 1] = 1  # foreground outside declared segments
    with pytest.raises(InvalidSpanError):
        GroundTruth(masks=masks, boxes=np.zeros((4, 4)), segments=[(2, 3)])


def test_ground_truth_clip_recomputes_segments():
    gt = _make_gt(T=8, segments=[(1, 3), (5, 8)])
    clipped = gt.clip(2, 6)
    assert clipped.segments == [(0, 1), (3, 4)]
    assert clipped.num_frames == 4


# ---------------------------------------------------------------- matching & total


def _make_pred(rng, n_q=5, T=6, H=8, W=8, perfect_query=None, gt=None):
    mask_logits = rng.normal(size=(n_q, T, H, W))
    boxes = rng.uniform(0.2, 0.8, size=(n_q, T, 4))
    seq = rng.uniform(0.05, 0.95, size=n_q)
    if perfect_query is not None:
        mask_logits[perfect_query] = _logits_for(gt.masks, scale=20.0)
        boxes[perfect_query] = gt.boxes
        seq[perfect_query] = 1.0 - 1e-7
    sl = rng.normal(size=(n_q, T))
    el = rng.normal(size=(n_q, T))
    return SimpleNamespace(
        mask_logits=t(mask_logits),
        boxes=t(boxes),
        seq_align=t(seq),
        relevance=t(rng.uniform(0.05, 0.95, size=(n_q, T))),
        span_start_logits=t(sl),
        span_end_logits=t(el),
        span_start=t(1 / (1 + np.exp(-sl))),
        span_end=t(1 / (1 + np.exp(-el))),
    )


def test_match_selects_exact_query(rng):
    gt = _make_gt()
    cfg = ModelConfig()
    pred = _make_pred(rng, perfect_query=3, gt=gt)
    assert match_query(pred, gt, cfg) == 3


def test_match_tie_breaks_to_first(rng):
    gt = _make_gt()
    cfg = ModelConfig()
    pred = _make_pred(rng)
    for field in ("mask_logits", "boxes", "seq_align", "relevance"):
        arr = getattr(pred, field).data
        arr[:] = arr[0]
    assert match_query(pred, gt, cfg) == 0


def test_match_equals_exhaustive_enumeration(rng):
    # independent brute force: recompute each component cost with plain numpy
    gt = _make_gt()
    cfg = ModelConfig()
    pred = _make_pred(rng)
    fg = np.flatnonzero(gt.relevance > 0)
    best, best_cost = None, np.inf
    for q in range(5):
        p = np.clip(pred.seq_align.data[q], 1e-7, 1 - 1e-7)
        cls = -0.25 * (1 - p) ** 2 * np.log(p)
        probs = 1 / (1 + np.exp(-pred.mask_logits.data[q, fg]))
        gm = gt.masks[fg].astype(np.float64)
        dice = np.mean([1 - 2 * (pf * gf).sum() / (pf.sum() + gf.sum() + 1e-6)
                        for pf, gf in zip(probs, gm)])
        pc = np.clip(probs, 1e-7, 1 - 1e-7)
        pt = pc * gm + (1 - pc) * (1 - gm)
        at = 0.25 * gm + 0.75 * (1 - gm)
        mfocal = (-at * (1 - pt) ** 2 * np.log(pt)).mean()
        b = pred.boxes.data[q, fg]
        g = gt.boxes[fg]
        l1 = np.abs(b - g).mean()
        giou_total = 0.0
        for bb, gg in zip(b, g):
            bx = [bb[0] - bb[2] / 2, bb[1] - bb[3] / 2, bb[0] + bb[2] / 2, bb[1] + bb[3] / 2]
            gx = [gg[0] - gg[2] / 2, gg[1] - gg[3] / 2, gg[0] + gg[2] / 2, gg[1] + gg[3] / 2]
            iw = max(0.0, min(bx[2], gx[2]) - max(bx[0], gx[0]))
            ih = max(0.0, min(bx[3], gx[3]) - max(bx[1], gx[1]))
            inter = iw * ih
            union = (bx[2] - bx[0]) * (bx[3] - bx[1]) + (gx[2] - gx[0]) * (gx[3] - gx[1]) - inter
            ew = max(bx[2], gx[2]) - min(bx[0], gx[0])
            eh = max(bx[3], gx[3]) - min(bx[1], gx[1])
            enclose = ew * eh + 1e-9
            giou_total += 1 - (inter / (union + 1e-9) - (enclose - union) / enclose)
        box = l1 + giou_total / len(fg)
        cost = 5 * cls + 5 * box + 2 * (dice + mfocal)
        if cost < best_cost:
            best, best_cost = q, cost
    assert match_query(pred, gt, cfg) == best


def test_match_invariant_under_constant_cost_shift(rng):
    gt = _make_gt()
    cfg = ModelConfig()
    pred = _make_pred(rng)
    costs = query_costs(pred, gt, cfg)
    assert np.argmin(costs) == np.argmin(costs + 7.3)


def test_total_loss_near_zero_for_perfect_prediction(rng):
    gt = _make_gt()
    cfg = ModelConfig()
    pred = _make_pred(rng, perfect_query=1, gt=gt)
    # make every auxiliary output match the ground truth too
    pred.seq_align.data[:] = 1e-7
    pred.seq_align.data[1] = 1 - 1e-7
    pred.relevance.data[1] = np.clip(gt.relevance, 1e-7, 1 - 1e-7)
    ts, te = gt.span_targets(cfg.sigma_frac, cfg.sigma_min)
    pred.span_start_logits.data[1] = np.log(ts)
    pred.span_end_logits.data[1] = np.log(te)
    breakdown = total_loss(pred, gt, cfg)
    assert breakdown.query_index == 1
    assert breakdown.total < 0.02


def test_total_loss_weighted_sum_bit_exact(rng):
    gt = _make_gt()
    cfg = ModelConfig()
    pred = _make_pred(rng)
    b = total_loss(pred, gt, cfg)
    manual = ((((5.0 * b.cls + 5.0 * b.box) + 2.0 * b.mask) + 10.0 * b.span) + 5.0 * b.rel)
    assert manual == b.total  # bit-exact linearity


def test_total_loss_cls_only_when_other_weights_zero(rng):
    gt = _make_gt()
    cfg = ModelConfig(w_box=0, w_mask=0, w_span=0, w_rel=0)
    pred = _make_pred(rng)
    b = total_loss(pred, gt, cfg)
    assert abs(b.total - 5.0 * b.cls) < 1e-15


def test_total_loss_component_sum_oracle(rng):
    # recompute each component independently and compare
    gt = _make_gt()
    cfg = ModelConfig()
    pred = _make_pred(rng)
    b = total_loss(pred, gt, cfg)
    j = b.query_index
    fg = np.flatnonzero(gt.relevance > 0)
    y = np.zeros(5)
    y[j] = 1
    cls = focal_loss(pred.seq_align.detach(), y).item()
    box = box_loss(pred.boxes.detach()[j][fg.tolist()], gt.boxes[fg]).item()
    logits = pred.mask_logits.detach()[j][fg.tolist()]
    mask = dice_loss(logits, gt.masks[fg]).item() + mask_focal_loss(logits, gt.masks[fg]).item()
    ts, te = gt.span_targets(cfg.sigma_frac, cfg.sigma_min)
    span = kl_span_loss(pred.span_start_logits.detach()[j],
                        pred.span_end_logits.detach()[j], ts, te).item()
    rel = focal_loss(pred.relevance.detach()[j], gt.relevance).item()
    expected = 5 * cls + 5 * box + 2 * mask + 10 * span + 5 * rel
    assert abs(b.total - expected) < 1e-9


def test_total_loss_gradients_flow(rng):
    gt = _make_gt(T=4, H=5, W=5)
    cfg = ModelConfig()
    pred = _make_pred(rng, n_q=2, T=4, H=5, W=5)
    b = total_loss(pred, gt, cfg)
    b.tensor.backward()
    for field in ("mask_logits", "boxes", "seq_align", "relevance",
                  "span_start_logits", "span_end_logits"):
        grad = getattr(pred, field).grad
        assert grad is not None and np.isfinite(grad).all()


def test_total_loss_gradcheck_with_pinned_query(rng):
    gt = _make_gt(T=3, H=4, W=4, segments=((0, 2),))
    cfg = ModelConfig()

    masks0 = rng.normal(size=(2, 3, 4, 4))
    boxes0 = rng.uniform(0.3, 0.7, size=(2, 3, 4))
    seq0 = rng.uniform(0.2, 0.8, size=2)
    rel0 = rng.uniform(0.2, 0.8, size=(2, 3))
    sl0 = rng.normal(size=(2, 3))
    el0 = rng.normal(size=(2, 3))

    def f(masks, boxes, seq, rel, sl, el):
        pred = SimpleNamespace(mask_logits=masks, boxes=boxes, seq_align=seq,
                               relevance=rel, span_start_logits=sl, span_end_logits=el,
                               span_start=None, span_end=None)
        return total_loss(pred, gt, cfg, query_index=1).tensor

    xs = [t(masks0), t(boxes0), t(seq0), t(rel0), t(sl0), t(el0)]
    assert ad.grad_check(f, xs, eps=1e-6) < 1e-5


def test_total_loss_span_boundary_masking(rng):
    gt = _make_gt()
    cfg = ModelConfig()
    pred = _make_pred(rng)
    full = total_loss(pred, gt, cfg, query_index=2)
    start_only = total_loss(pred, gt, cfg, query_index=2,
                            span_boundaries=(True, False))
    end_only = total_loss(pred, gt, cfg, query_index=2,
                          span_boundaries=(False, True))
    none = total_loss(pred, gt, cfg, query_index=2,
                      span_boundaries=(False, False))
    assert abs(full.span - (start_only.span + end_only.span)) < 1e-10
    assert none.span == 0.0
    assert none.cls == full.cls and none.mask == full.mask


def test_total_loss_absent_target(rng):
    T, H, W = 5, 6, 6
    gt = GroundTruth(masks=np.zeros((T, H, W), dtype=np.uint8),
                     boxes=np.zeros((T, 4)), segments=[])
    cfg = ModelConfig()
    pred = _make_pred(rng, T=T, H=H, W=W)
    b = total_loss(pred, gt, cfg)
    assert b.box == 0.0 and b.mask == 0.0 and b.span == 0.0
    assert np.isfinite(b.total)
