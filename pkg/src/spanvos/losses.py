"""Training losses, span targets, and least-cost query selection.

The total objective combines classification (focal), box (L1 + gIoU),
mask (DICE + focal), temporal span (KL against discrete Gaussians), and
frame relevance (focal) terms with weights (5, 5, 2, 10, 5).  Box and mask
terms are only evaluated on frames where the target is present.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidSpanError
from .config import ModelConfig

PROB_EPS = 1e-7


@dataclass
class GroundTruth:
    """Per-expression supervision for one video (or clip).

    masks:    (T, H, W) binary foreground maps
    boxes:    (T, 4) normalized (cx, cy, w, h); rows are zero on absent frames
    segments: sorted [start, end) frame intervals where the target appears
    """

    masks: np.ndarray
    boxes: np.ndarray
    segments: list = field(default_factory=list)

    def __post_init__(self):
        self.masks = np.asarray(self.masks)
        self.boxes = np.asarray(self.boxes, dtype=np.float64)
        self.segments = [(int(s), int(e)) for s, e in sorted(self.segments)]
        t = self.masks.shape[0]
        in_segments = np.zeros(t, dtype=bool)
        for s, e in self.segments:
            if not 0 <= s < e <= t:
                raise InvalidSpanError(f"segment [{s},{e}) outside video of length {t}")
            in_segments[s:e] = True
        has_fg = self.masks.reshape(t, -1).any(axis=1)
        if not np.array_equal(in_segments, has_fg):
            raise InvalidSpanError("segments disagree with mask foreground frames")

    @property
    def num_frames(self):
        return self.masks.shape[0]

    @property
    def relevance(self):
        """(T,) binary: 1 exactly on frames with foreground."""
        t = self.num_frames
        r = np.zeros(t, dtype=np.float64)
        for s, e in self.segments:
            r[s:e] = 1.0
        return r

    @property
    def has_target(self):
        return bool(self.segments)

    @property
    def span_envelope(self):
        """(first_start, last_end_inclusive) merging all segments, or None."""
        if not self.segments:
            return None
        return self.segments[0][0], self.segments[-1][1] - 1

    def span_targets(self, sigma_frac, sigma_min=1.0):
        env = self.span_envelope
        if env is None:
            raise InvalidSpanError("no segments: span targets undefined")
        return gaussian_span_target(env[0], env[1], self.num_frames,
                                    sigma_frac, sigma_min=sigma_min)

    def clip(self, start, end):
        """Restrict to frames [start, end) for training windows."""
        new_segments = []
        for s, e in self.segments:
            s2, e2 = max(s, start) - start, min(e, end) - start
            if s2 < e2:
                new_segments.append((s2, e2))
        return GroundTruth(self.masks[start:end], self.boxes[start:end], new_segments)


@dataclass
class LossBreakdown:
    cls: float
    box: float
    mask: float
    span: float
    rel: float
    total: float
    query_index: int
    tensor: Tensor = None  # graph scalar; None when computed without gradients


def focal_loss(p, y, alpha=0.25, gamma=2.0):
    """Mean of -alpha_t (1 - p_t)^gamma log(p_t) with p_t = p if y==1 else 1-p."""
    if not isinstance(p, Tensor):
        p = Tensor(p)
    y = np.asarray(y, dtype=p.dtype)
    p = ad.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    p_t = ad.add(ad.mul(p, y), ad.mul(ad.sub(1.0, p), 1.0 - y))
    alpha_t = alpha * y + (1.0 - alpha) * (1.0 - y)
    weight = ad.mul(ad.power(ad.sub(1.0, p_t), gamma), alpha_t)
    return ad.mean(ad.neg(ad.mul(weight, ad.log(p_t))))


def dice_loss(mask_logits, gt_masks, eps=1e-6):
    """1 - 2|P∩G| / (|P| + |G| + eps), per frame, averaged; P = sigmoid(logits)."""
    if not isinstance(mask_logits, Tensor):
        mask_logits = Tensor(mask_logits)
    g = np.asarray(gt_masks, dtype=mask_logits.dtype)
    t = g.shape[0]
    p = ad.reshape(ad.sigmoid(mask_logits), (t, -1))
    gflat = g.reshape(t, -1)
    inter = ad.sum_(ad.mul(p, gflat), axis=1)
    denom = ad.add(ad.add(ad.sum_(p, axis=1), gflat.sum(axis=1)), eps)
    return ad.mean(ad.sub(1.0, ad.div(ad.mul(inter, 2.0), denom)))


def mask_focal_loss(mask_logits, gt_masks, alpha=0.25, gamma=2.0):
    if not isinstance(mask_logits, Tensor):
        mask_logits = Tensor(mask_logits)
    return focal_loss(ad.sigmoid(mask_logits), np.asarray(gt_masks), alpha, gamma)


def _center_to_corners(b):
    cx, cy, w, h = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    half_w, half_h = ad.mul(w, 0.5), ad.mul(h, 0.5)
    return (ad.sub(cx, half_w), ad.sub(cy, half_h),
            ad.add(cx, half_w), ad.add(cy, half_h))


def _pairwise_min(a, b):
    return ad.sub(a, ad.relu(ad.sub(a, b)))


def _pairwise_max(a, b):
    return ad.add(a, ad.relu(ad.sub(b, a)))


def generalized_iou(boxes, gt_boxes):
    """Per-row gIoU of (cx, cy, w, h) boxes against constant ground truth."""
    if not isinstance(boxes, Tensor):
        boxes = Tensor(boxes)
    gt = np.asarray(gt_boxes, dtype=boxes.dtype)
    x1, y1, x2, y2 = _center_to_corners(boxes)
    gx1 = gt[..., 0] - gt[..., 2] / 2
    gy1 = gt[..., 1] - gt[..., 3] / 2
    gx2 = gt[..., 0] + gt[..., 2] / 2
    gy2 = gt[..., 1] + gt[..., 3] / 2

    iw = ad.relu(ad.sub(_pairwise_min(x2, Tensor(gx2)), _pairwise_max(x1, Tensor(gx1))))
    ih = ad.relu(ad.sub(_pairwise_min(y2, Tensor(gy2)), _pairwise_max(y1, Tensor(gy1))))
    inter = ad.mul(iw, ih)
    area = ad.mul(ad.sub(x2, x1), ad.sub(y2, y1))
    gt_area = (gx2 - gx1) * (gy2 - gy1)
    union = ad.sub(ad.add(area, gt_area), inter)

    ew = ad.sub(_pairwise_max(x2, Tensor(gx2)), _pairwise_min(x1, Tensor(gx1)))
    eh = ad.sub(_pairwise_max(y2, Tensor(gy2)), _pairwise_min(y1, Tensor(gy1)))
    enclose = ad.add(ad.mul(ew, eh), 1e-9)
    iou = ad.div(inter, ad.add(union, 1e-9))
    return ad.sub(iou, ad.div(ad.sub(enclose, union), enclose))


def box_loss(boxes, gt_boxes):
    """Mean L1 over coordinates plus mean (1 - gIoU) over rows."""
    if not isinstance(boxes, Tensor):
        boxes = Tensor(boxes)
    gt = np.asarray(gt_boxes, dtype=boxes.dtype)
    l1 = ad.mean(ad.abs_(ad.sub(boxes, gt)))
    giou = ad.mean(ad.sub(1.0, generalized_iou(boxes, gt)))
    return ad.add(l1, giou)


def gaussian_span_target(start, end, num_frames, sigma_frac, sigma_min=1.0):
    """Discrete Gaussians over frames centered at start and end (inclusive).

    sigma = max(sigma_min, sigma_frac * span_length); each curve is
    normalized to sum to 1.  Returns (tau_start, tau_end) float64 arrays.
    """
    start, end = int(start), int(end)
    if start > end:
        raise InvalidSpanError(f"span start {start} after end {end}")
    if start < 0 or end >= num_frames:
        raise InvalidSpanError(f"span [{start},{end}] outside video of length {num_frames}")
    sigma = max(float(sigma_min), float(sigma_frac) * (end - start + 1))
    grid = np.arange(num_frames, dtype=np.float64)

    def curve(center):
        raw = np.exp(-0.5 * ((grid - center) / sigma) ** 2)
        return raw / raw.sum()

    return curve(start), curve(end)


def kl_span_loss(start_logits, end_logits, tau_start, tau_end,
                 include_start=True, include_end=True):
    """KL(target || softmax(logits over frames)), summed over start and end.

    Either term can be dropped: a training clip that truncates the target's
    envelope never observed that boundary, so it carries no valid target
    for it.
    """
    total = None
    parts = ((start_logits, np.asarray(tau_start), include_start),
             (end_logits, np.asarray(tau_end), include_end))
    for logits, target, include in parts:
        if not include:
            continue
        if not isinstance(logits, Tensor):
            logits = Tensor(logits)
        # log softmax with a constant shift (exact for gradients)
        shift = float(logits.data.max())
        z = ad.exp(ad.sub(logits, shift))
        log_q = ad.sub(ad.sub(logits, shift), ad.log(ad.sum_(z)))
        mask = target > 0
        entropy = float((target[mask] * np.log(target[mask])).sum())
        cross = ad.sum_(ad.mul(log_q, target))
        part = ad.add(ad.neg(cross), entropy)
        total = part if total is None else ad.add(total, part)
    if total is None:
        return Tensor(np.zeros(()))
    return total


def query_costs(pred, gt, cfg: ModelConfig):
    """Detection cost per query: w_cls*cls + w_box*box + w_mask*mask.

    Computed with the same component formulas as the loss, against this
    query being the target; gradient-free.
    """
    fg = np.flatnonzero(gt.relevance > 0)
    costs = []
    with ad.no_grad():
        n_q = pred.seq_align.shape[0]
        for q in range(n_q):
            cls_cost = focal_loss(pred.seq_align[q:q + 1], np.ones(1),
                                  cfg.focal_alpha, cfg.focal_gamma).item()
            box_cost = mask_cost = 0.0
            if fg.size:
                box_cost = box_loss(ad.index_select(pred.boxes[q], fg, axis=0),
                                    gt.boxes[fg]).item()
                logits_fg = ad.index_select(pred.mask_logits[q], fg, axis=0)
                mask_cost = (dice_loss(logits_fg, gt.masks[fg]).item()
                             + mask_focal_loss(logits_fg, gt.masks[fg],
                                               cfg.focal_alpha, cfg.focal_gamma).item())
            costs.append(cfg.w_cls * cls_cost + cfg.w_box * box_cost + cfg.w_mask * mask_cost)
    return np.array(costs)


def match_query(pred, gt, cfg: ModelConfig):
    """Index of the least-cost query; ties break to the smallest index."""
    return int(np.argmin(query_costs(pred, gt, cfg)))


def exhaustive_match(pred, gt, cfg: ModelConfig):
    """argmin of `exhaustive_costs` (assertion-mode mirror of match_query)."""
    return int(np.argmin(exhaustive_costs(pred, gt, cfg)))


def exhaustive_costs(pred, gt, cfg: ModelConfig):
    """Matching costs re-derived with plain numpy at float64.

    Walks every query, recomputing each cost component from raw arrays
    (no tensor ops); used to verify match_query during training.
    """
    def np_sigmoid(x):
        out = np.empty_like(x, dtype=np.float64)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    def np_focal(p, y):
        p = np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1 - PROB_EPS)
        p_t = p * y + (1 - p) * (1 - y)
        a_t = cfg.focal_alpha * y + (1 - cfg.focal_alpha) * (1 - y)
        return float((-a_t * (1 - p_t) ** cfg.focal_gamma * np.log(p_t)).mean())

    seq = np.asarray(pred.seq_align.data, dtype=np.float64)
    mask_logits = np.asarray(pred.mask_logits.data, dtype=np.float64)
    boxes = np.asarray(pred.boxes.data, dtype=np.float64)
    fg = np.flatnonzero(gt.relevance > 0)
    costs = []
    for q in range(seq.shape[0]):
        cost = cfg.w_cls * np_focal(seq[q:q + 1], np.ones(1))
        if fg.size:
            probs = np_sigmoid(mask_logits[q][fg])
            gm = gt.masks[fg].astype(np.float64)
            dice = np.mean([1 - 2 * (p * g).sum() / (p.sum() + g.sum() + 1e-6)
                            for p, g in zip(probs, gm)])
            cost += cfg.w_mask * (dice + np_focal(probs, gm))
            b = boxes[q][fg]
            g = gt.boxes[fg]
            l1 = np.abs(b - g).mean()
            giou_sum = 0.0
            for bb, gg in zip(b, g):
                bx1, by1 = bb[0] - bb[2] / 2, bb[1] - bb[3] / 2
                bx2, by2 = bb[0] + bb[2] / 2, bb[1] + bb[3] / 2
                gx1, gy1 = gg[0] - gg[2] / 2, gg[1] - gg[3] / 2
                gx2, gy2 = gg[0] + gg[2] / 2, gg[1] + gg[3] / 2
                iw = max(0.0, min(bx2, gx2) - max(bx1, gx1))
                ih = max(0.0, min(by2, gy2) - max(by1, gy1))
                inter = iw * ih
                union = ((bx2 - bx1) * (by2 - by1)
                         + (gx2 - gx1) * (gy2 - gy1) - inter)
                enclose = ((max(bx2, gx2) - min(bx1, gx1))
                           * (max(by2, gy2) - min(by1, gy1))) + 1e-9
                giou_sum += 1 - (inter / (union + 1e-9) - (enclose - union) / enclose)
            cost += cfg.w_box * (l1 + giou_sum / fg.size)
        costs.append(cost)
    return np.array(costs)


def total_loss(pred, gt, cfg: ModelConfig, query_index=None,
               span_boundaries=(True, True)):
    """Weighted objective on the matched query.

    Box/mask terms use only target-present frames; the span term uses the
    merged envelope of the ground-truth segments.  `span_boundaries` masks
    the (start, end) KL terms for clips that truncate the envelope.
    Returns a LossBreakdown whose `.tensor` is the differentiable total.
    """
    j = match_query(pred, gt, cfg) if query_index is None else int(query_index)
    n_q = pred.seq_align.shape[0]
    zero = Tensor(np.zeros(()), dtype=pred.seq_align.dtype)

    cls_target = np.zeros(n_q)
    if gt.has_target:
        cls_target[j] = 1.0
    cls = focal_loss(pred.seq_align, cls_target, cfg.focal_alpha, cfg.focal_gamma)

    fg = np.flatnonzero(gt.relevance > 0)
    if fg.size:
        box = box_loss(ad.index_select(pred.boxes[j], fg, axis=0), gt.boxes[fg])
        logits_fg = ad.index_select(pred.mask_logits[j], fg, axis=0)
        mask = ad.add(dice_loss(logits_fg, gt.masks[fg]),
                      mask_focal_loss(logits_fg, gt.masks[fg],
                                      cfg.focal_alpha, cfg.focal_gamma))
    else:
        box = zero
        mask = zero

    if gt.has_target and cfg.w_span != 0 and any(span_boundaries):
        tau_s, tau_e = gt.span_targets(cfg.sigma_frac, cfg.sigma_min)
        span = kl_span_loss(pred.span_start_logits[j], pred.span_end_logits[j],
                            tau_s, tau_e, include_start=span_boundaries[0],
                            include_end=span_boundaries[1])
    else:
        span = zero

    rel = focal_loss(pred.relevance[j], gt.relevance, cfg.focal_alpha, cfg.focal_gamma)

    total = ad.add(
        ad.add(
            ad.add(
                ad.add(ad.mul(cls, cfg.w_cls), ad.mul(box, cfg.w_box)),
                ad.mul(mask, cfg.w_mask)),
            ad.mul(span, cfg.w_span)),
        ad.mul(rel, cfg.w_rel))

    return LossBreakdown(cls=cls.item(), box=box.item(), mask=mask.item(),
                         span=span.item(), rel=rel.item(), total=total.item(),
                         query_index=j, tensor=total)
