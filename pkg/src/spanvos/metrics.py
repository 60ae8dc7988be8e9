"""Spatial-temporal evaluation protocol and dataset statistics.

Per expression: region similarity J (pixel IoU), contour accuracy F
(boundary precision/recall under a distance tolerance), and temporal IoU
between predicted and ground-truth frame sets.  J and F are measured only
on frames where either mask is non-empty; expressions are then grouped by
their target-irrelevant (TI) rate for reporting.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

TI_BUCKETS = [
    ("0%-33%", 0.0, 1.0 / 3.0),
    ("33%-66%", 1.0 / 3.0, 2.0 / 3.0),
    ("66%-100%", 2.0 / 3.0, 1.0),
]


def region_j(pred_mask, gt_mask):
    """Pixel IoU; 1.0 when both masks are empty."""
    p = np.asarray(pred_mask, dtype=bool)
    g = np.asarray(gt_mask, dtype=bool)
    if p.shape != g.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {g.shape}")
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & g) / union


def boundary_pixels(mask):
    """Foreground pixels with a background 4-neighbor (border is background)."""
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        return np.zeros_like(m)
    padded = np.pad(m, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return m & ~interior


def default_contour_tolerance(shape):
    """ceil(0.008 * image diagonal), the usual boundary-metric radius."""
    h, w = shape[-2], shape[-1]
    return math.ceil(0.008 * math.hypot(h, w))


def contour_f(pred_mask, gt_mask, tolerance=None):
    """Harmonic mean of boundary precision and recall within `tolerance` px."""
    p = np.asarray(pred_mask, dtype=bool)
    g = np.asarray(gt_mask, dtype=bool)
    if p.shape != g.shape:
        raise ValueError(f"mask shapes differ: {p.shape} vs {g.shape}")
    if tolerance is None:
        tolerance = default_contour_tolerance(p.shape)
    pb = np.argwhere(boundary_pixels(p))
    gb = np.argwhere(boundary_pixels(g))
    if len(pb) == 0 and len(gb) == 0:
        return 1.0
    if len(pb) == 0 or len(gb) == 0:
        return 0.0
    d2 = ((pb[:, None, :] - gb[None, :, :]) ** 2).sum(axis=2)
    tol2 = tolerance * tolerance
    precision = (d2.min(axis=1) <= tol2).mean()
    recall = (d2.min(axis=0) <= tol2).mean()
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def tiou(pred_frames, gt_frames):
    """Frame-set IoU; 1.0 when both spans are empty."""
    p = np.asarray(pred_frames, dtype=bool)
    g = np.asarray(gt_frames, dtype=bool)
    if p.shape != g.shape:
        raise ValueError(f"span lengths differ: {p.shape} vs {g.shape}")
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & g) / union


def ti_rate(gt_frames, num_frames=None):
    """Fraction of frames without the target."""
    g = np.asarray(gt_frames, dtype=bool)
    t = num_frames if num_frames is not None else g.size
    return 1.0 - np.count_nonzero(g) / t


@dataclass
class ExpressionMetrics:
    j: float
    f: float
    jf: float
    tiou: float
    ti: float
    sample_id: str = ""

    def to_dict(self):
        return {"id": self.sample_id, "j": self.j, "f": self.f,
                "jf": self.jf, "tiou": self.tiou, "ti": self.ti}


def span_to_frame_set(span, num_frames):
    """Binary frame membership of an inclusive [start, end] span (None = empty)."""
    frames = np.zeros(num_frames, dtype=bool)
    if span is not None:
        s, e = int(span[0]), int(span[1])
        if e >= s:
            frames[max(s, 0):min(e, num_frames - 1) + 1] = True
    return frames


def evaluate_expression(pred, gt, tolerance=None, sample_id=""):
    """Score one prediction against one ground truth.

    `pred` needs `.masks` (T,H,W binary, empty outside its span) and `.span`
    (inclusive pair or None).  J/F average over frames where either mask is
    non-empty; a correct absent call (no such frame) scores 1.
    """
    masks = np.asarray(pred.masks, dtype=bool)
    t = gt.num_frames
    if masks.shape[0] != t:
        raise ValueError(f"prediction has {masks.shape[0]} frames, gt has {t}")
    gt_present = gt.relevance > 0
    js, fs = [], []
    for f_idx in range(t):
        pm = masks[f_idx]
        gm = gt.masks[f_idx]
        if not pm.any() and not gt_present[f_idx]:
            continue
        js.append(region_j(pm, gm))
        fs.append(contour_f(pm, gm, tolerance=tolerance))
    j = float(np.mean(js)) if js else 1.0
    f = float(np.mean(fs)) if fs else 1.0
    pred_frames = span_to_frame_set(pred.span, t)
    ti_val = ti_rate(gt_present)
    return ExpressionMetrics(j=j, f=f, jf=(j + f) / 2,
                             tiou=tiou(pred_frames, gt_present),
                             ti=ti_val, sample_id=sample_id)


def evaluate_many(pairs, tolerance=None, max_workers=4):
    """Evaluate (pred, gt, sample_id) triples in parallel, preserving order."""
    def run(args):
        pred, gt, sid = args
        return evaluate_expression(pred, gt, tolerance=tolerance, sample_id=sid)

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(run, pairs))


@dataclass
class MetricsReport:
    overall: dict
    buckets: list
    per_expression: list = field(default_factory=list)

    def to_dict(self):
        return {"overall": self.overall, "buckets": self.buckets,
                "per_expression": [m.to_dict() for m in self.per_expression]}

    def to_text(self):
        rows = [("group", "count", "J", "F", "J&F", "tIoU")]

        def fmt(label, stats):
            return (label, str(stats["count"]), f"{stats['j']:.4f}", f"{stats['f']:.4f}",
                    f"{stats['jf']:.4f}", f"{stats['tiou']:.4f}")

        rows.append(fmt("overall", self.overall))
        for b in self.buckets:
            rows.append(fmt(b["range"], b))
        widths = [max(len(r[i]) for r in rows) for i in range(6)]
        lines = ["  ".join(cell.rjust(widths[i]) for i, cell in enumerate(row))
                 for row in rows]
        return "\n".join(lines)


def _aggregate(metrics):
    j = float(np.mean([m.j for m in metrics]))
    f = float(np.mean([m.f for m in metrics]))
    return {"count": len(metrics), "j": j, "f": f, "jf": (j + f) / 2,
            "tiou": float(np.mean([m.tiou for m in metrics]))}


def grouped_report(metrics):
    """Overall plus TI-bucketed means; empty buckets are omitted, not zeroed."""
    metrics = list(metrics)
    if not metrics:
        raise ValueError("no expressions to report")
    overall = _aggregate(metrics)
    buckets = []
    for idx, (label, lo, hi) in enumerate(TI_BUCKETS):
        if idx == 0:
            members = [m for m in metrics if lo <= m.ti <= hi]
        else:
            members = [m for m in metrics if lo < m.ti <= hi]
        if not members:
            continue
        entry = {"range": label, "lo": lo, "hi": hi}
        entry.update(_aggregate(members))
        buckets.append(entry)
    assert sum(b["count"] for b in buckets) == len(metrics)
    return MetricsReport(overall=overall, buckets=buckets, per_expression=metrics)


# ---------------------------------------------------------------- dataset statistics


def detect_scenes(frames, threshold=0.3):
    """Scene count: 1 + number of cuts where mean |frame delta| > threshold."""
    f = np.asarray(frames, dtype=np.float64)
    if f.shape[0] < 2:
        return 1
    diffs = np.abs(np.diff(f, axis=0)).mean(axis=tuple(range(1, f.ndim)))
    return int(np.count_nonzero(diffs > threshold)) + 1


@dataclass
class DatasetStats:
    videos: int
    objects: int
    expressions: int
    scenes_per_video: float
    dur_expression: float   # seconds the target is visible, mean per expression
    dur_video: float        # seconds per video, mean
    ti_mean: float
    ti_per_expression: list = field(default_factory=list)
    scenes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "videos": self.videos,
            "objects": self.objects,
            "expressions": self.expressions,
            "scenes_per_video": self.scenes_per_video,
            "dur_expression_s": self.dur_expression,
            "dur_video_s": self.dur_video,
            "ti_mean": self.ti_mean,
            "ti_per_expression": self.ti_per_expression,
            "scenes": self.scenes,
        }

    def to_text(self):
        d = self.to_dict()
        lines = [f"videos:            {d['videos']}",
                 f"objects:           {d['objects']}",
                 f"expressions:       {d['expressions']}",
                 f"scenes per video:  {d['scenes_per_video']:.2f}",
                 f"Dur(e) seconds:    {d['dur_expression_s']:.2f}",
                 f"Dur(v) seconds:    {d['dur_video_s']:.2f}",
                 f"TI rate:           {d['ti_mean']:.4f}"]
        return "\n".join(lines)


def dataset_stats(samples, fps=6.0, scene_threshold=0.3):
    """Benchmark statistics over VideoSample objects."""
    scenes, dur_e, dur_v, tis = [], [], [], []
    for s in samples:
        frames = s.frames
        scenes.append(detect_scenes(frames, threshold=scene_threshold))
        present = int(np.count_nonzero(s.gt.relevance))
        t = s.gt.num_frames
        dur_e.append(present / fps)
        dur_v.append(t / fps)
        tis.append(1.0 - present / t)
    n = len(scenes)
    return DatasetStats(
        videos=n, objects=n, expressions=n,
        scenes_per_video=float(np.mean(scenes)),
        dur_expression=float(np.mean(dur_e)),
        dur_video=float(np.mean(dur_v)),
        ti_mean=float(np.mean(tis)),
        ti_per_expression=[float(v) for v in tis],
        scenes=scenes,
    )
