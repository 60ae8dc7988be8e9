"""Procedural untrimmed-video benchmark with exact ground truth.

Each sample is a video of flat-colored geometric shapes over scene-cut
backgrounds.  One target shape appears only during sampled temporal
segments and moves piecewise-linearly; distractor shapes share some but
never all of the query attributes.  Masks are rasterized from the analytic
shape membership at pixel centers, and boxes come from the analytic
extent, so ground truth is exact by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .losses import GroundTruth

COLORS = {
    "red": (220, 40, 40), "green": (40, 180, 60), "blue": (50, 90, 220),
    "yellow": (230, 220, 50), "magenta": (200, 60, 200), "cyan": (60, 200, 210),
    "orange": (235, 140, 40), "purple": (130, 60, 190), "white": (245, 245, 245),
    "gray": (128, 128, 128), "brown": (140, 90, 50), "pink": (240, 150, 190),
    "teal": (30, 130, 130), "olive": (120, 130, 40),
}
SHAPES = ("circle", "square", "triangle", "diamond", "ring", "bar")
MOTIONS = {"right": (1, 0), "left": (-1, 0), "down": (0, 1), "up": (0, -1),
           "still": (0, 0)}
SIZES = {"small": 0.08, "medium": 0.125, "large": 0.18}

VOCABULARY = tuple(list(COLORS) + list(SHAPES) + list(MOTIONS) + list(SIZES))
TOKEN_TO_ID = {tok: i for i, tok in enumerate(VOCABULARY)}

# alternating dark/light so every hard cut clears the scene-detector threshold
BACKGROUNDS = [(22, 24, 34), (232, 228, 218), (46, 66, 52), (214, 204, 232),
               (40, 46, 72), (226, 216, 196)]


@dataclass
class GenConfig:
    num_frames: int = 48
    height: int = 64
    width: int = 64
    num_distractors: int = 2
    num_segments: int = 1
    scene_cuts: int = 2
    present_frames: int = None  # exact target-present frame count; None = sampled
    fps: float = 6.0

    def validate(self):
        if self.num_frames < 8:
            raise ConfigError("num_frames must be >= 8")
        if self.num_segments < 0 or self.num_distractors < 0 or self.scene_cuts < 0:
            raise ConfigError("counts must be non-negative")
        max_radius = SIZES["large"] * min(self.height, self.width)
        if min(self.height, self.width) < 2 * (max_radius + 3):
            raise ConfigError(
                f"canvas {self.height}x{self.width} too small for the largest shape")
        return self


@dataclass
class ShapeTrack:
    """One object: attributes plus an analytic trajectory.

    positions[t] is (cx, cy) in pixel units or None when absent.
    """

    color: str
    shape: str
    size: str
    motion: str
    radius: float
    positions: list

    @property
    def attributes(self):
        return (self.color, self.shape, self.size, self.motion)

    def extent(self):
        """(w, h) of the tight analytic bounding box, pixel units."""
        r = self.radius
        if self.shape == "bar":
            return 2 * r, 0.8 * r
        return 2 * r, 2 * r


@dataclass
class VideoSample:
    sample_id: str
    frames_u8: np.ndarray          # (T, 3, H, W) uint8
    query_tokens: list
    gt: GroundTruth
    scene_cuts: list
    seed: int
    fps: float = 6.0

    @property
    def frames(self):
        """Float frames in [0, 1], derived deterministically from the bytes."""
        return self.frames_u8.astype(np.float32) / 255.0

    @property
    def query_ids(self):
        return np.array([TOKEN_TO_ID[t] for t in self.query_tokens], dtype=np.int64)

    @property
    def ti(self):
        return 1.0 - float(np.count_nonzero(self.gt.relevance)) / self.gt.num_frames

    def equals(self, other):
        return (self.sample_id == other.sample_id
                and np.array_equal(self.frames_u8, other.frames_u8)
                and self.query_tokens == list(other.query_tokens)
                and np.array_equal(self.gt.masks, other.gt.masks)
                and np.allclose(self.gt.boxes, other.gt.boxes, atol=0)
                and self.gt.segments == other.gt.segments
                and self.scene_cuts == list(other.scene_cuts)
                and self.seed == other.seed
                and self.fps == other.fps)


def shape_membership(shape, cx, cy, radius, height, width):
    """Boolean mask of pixel centers inside the analytic shape."""
    ys, xs = np.mgrid[0:height, 0:width]
    px = xs + 0.5
    py = ys + 0.5
    dx = px - cx
    dy = py - cy
    r = radius
    if shape == "circle":
        return dx * dx + dy * dy <= r * r
    if shape == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) <= r
    if shape == "diamond":
        return np.abs(dx) + np.abs(dy) <= r
    if shape == "ring":
        d2 = dx * dx + dy * dy
        return (d2 <= r * r) & (d2 > (0.5 * r) ** 2)
    if shape == "bar":
        return (np.abs(dx) <= r) & (np.abs(dy) <= 0.4 * r)
    if shape == "triangle":
        # apex (cx, cy-r), base corners (cx -/+ r, cy + r)
        inside = dy <= r
        inside &= dy >= 2 * dx - r      # right edge: from apex to (cx+r, cy+r)
        inside &= dy >= -2 * dx - r     # left edge
        return inside
    raise ConfigError(f"unknown shape {shape!r}")


def _sample_trajectory(rng, cfg, radius, motion, frames_present):
    """Straight-line positions for the given frames, kept inside the canvas."""
    w_ext = radius + 2.0
    lo_x, hi_x = w_ext, cfg.width - w_ext
    lo_y, hi_y = w_ext, cfg.height - w_ext
    if lo_x >= hi_x or lo_y >= hi_y:
        raise ConfigError("shape does not fit the canvas")
    dx, dy = MOTIONS[motion]
    n = len(frames_present)
    span = max(n - 1, 1)
    if dx == 0 and dy == 0:
        speed = 0.0
    else:
        max_travel = (hi_x - lo_x) if dx else (hi_y - lo_y)
        speed = min(1.2, max(0.4, max_travel / span * 0.8))
        speed = min(speed, max_travel / span)
    sx = rng.uniform(lo_x, hi_x - dx * speed * span) if dx > 0 else (
        rng.uniform(lo_x - dx * speed * span, hi_x) if dx < 0 else rng.uniform(lo_x, hi_x))
    sy = rng.uniform(lo_y, hi_y - dy * speed * span) if dy > 0 else (
        rng.uniform(lo_y - dy * speed * span, hi_y) if dy < 0 else rng.uniform(lo_y, hi_y))
    return {t: (sx + dx * speed * i, sy + dy * speed * i)
            for i, t in enumerate(frames_present)}


def _sample_segments(rng, cfg):
    """Target-present [start, end) intervals honoring cfg.present_frames."""
    t = cfg.num_frames
    if cfg.num_segments == 0:
        return []
    if cfg.present_frames is not None:
        present = int(cfg.present_frames)
    else:
        present = int(rng.integers(max(2, t // 6), t + 1))
    present = max(0, min(present, t))
    if present == 0:
        return []
    k = min(cfg.num_segments, max(1, present // 2))
    if present == t:
        return [(0, t)]
    gaps = t - present
    k = min(k, gaps + 1)  # need >=1 spare frame between consecutive segments
    # split `present` frames into k chunks, then place them with gaps
    cuts = sorted(rng.choice(np.arange(1, present), size=k - 1, replace=False)) if k > 1 else []
    lengths = np.diff([0] + list(cuts) + [present])
    # distribute gap frames around segments (k+1 slots, interior slots >= 1)
    while True:
        alloc = rng.multinomial(gaps, np.ones(k + 1) / (k + 1))
        if all(alloc[i] >= 1 for i in range(1, k)):
            break
    segments = []
    pos = alloc[0]
    for i, length in enumerate(lengths):
        segments.append((int(pos), int(pos + length)))
        pos += length + alloc[i + 1]
    return segments


def _sample_scene_cuts(rng, cfg):
    if cfg.scene_cuts == 0:
        return []
    candidates = np.arange(2, cfg.num_frames - 1)
    cuts = []
    for _ in range(cfg.scene_cuts):
        valid = [c for c in candidates if all(abs(c - x) >= 3 for x in cuts)]
        if not valid:
            break
        cuts.append(int(rng.choice(valid)))
    return sorted(cuts)


def _pick_distractor(rng, target_attrs):
    """Share some target attributes but differ in at least one."""
    pools = [list(COLORS), list(SHAPES), list(SIZES), list(MOTIONS)]
    n_flip = int(rng.integers(1, 4))
    flip = rng.choice(4, size=n_flip, replace=False)
    attrs = list(target_attrs)
    for idx in flip:
        choices = [v for v in pools[idx] if v != attrs[idx]]
        attrs[idx] = str(rng.choice(choices))
    return tuple(attrs)


def generate_sample(seed, cfg: GenConfig = None):
    """Deterministic sample from a seed; see module docstring for content."""
    cfg = (cfg or GenConfig()).validate()
    rng = np.random.default_rng(seed)
    t, h, w = cfg.num_frames, cfg.height, cfg.width

    # target attributes and trajectory
    color = str(rng.choice(list(COLORS)))
    shape = str(rng.choice(SHAPES))
    size = str(rng.choice(list(SIZES)))
    motion = str(rng.choice(list(MOTIONS)))
    target_attrs = (color, shape, size, motion)
    radius = SIZES[size] * min(h, w)
    segments = _sample_segments(rng, cfg)
    positions = {}
    for s, e in segments:
        positions.update(_sample_trajectory(rng, cfg, radius, motion, list(range(s, e))))
    target = ShapeTrack(color, shape, size, motion, radius,
                        [positions.get(f) for f in range(t)])

    distractors = []
    for _ in range(cfg.num_distractors):
        d_attrs = _pick_distractor(rng, target_attrs)
        d_radius = SIZES[d_attrs[2]] * min(h, w)
        d_pos = _sample_trajectory(rng, cfg, d_radius, d_attrs[3], list(range(t)))
        distractors.append(ShapeTrack(*d_attrs, radius=d_radius,
                                      positions=[d_pos[f] for f in range(t)]))

    query_tokens = [color, size, shape, motion]
    matches = [obj for obj in [target] + distractors if obj.attributes == target_attrs]
    assert len(matches) == 1, "query must identify exactly one object"

    scene_cuts = _sample_scene_cuts(rng, cfg)
    bg_index = np.zeros(t, dtype=int)
    for i, c in enumerate(scene_cuts):
        bg_index[c:] = i + 1

    frames = np.zeros((t, 3, h, w), dtype=np.uint8)
    masks = np.zeros((t, h, w), dtype=np.uint8)
    boxes = np.zeros((t, 4), dtype=np.float64)
    for f in range(t):
        canvas = np.empty((3, h, w), dtype=np.uint8)
        bg = BACKGROUNDS[bg_index[f] % len(BACKGROUNDS)]
        for c in range(3):
            canvas[c] = bg[c]
        for obj in distractors + [target]:       # target drawn last: never occluded
            pos = obj.positions[f]
            if pos is None:
                continue
            member = shape_membership(obj.shape, pos[0], pos[1], obj.radius, h, w)
            rgb = COLORS[obj.color]
            for c in range(3):
                canvas[c][member] = rgb[c]
        frames[f] = canvas
        pos = target.positions[f]
        if pos is not None:
            masks[f] = shape_membership(shape, pos[0], pos[1], radius, h, w)
            bw, bh = target.extent()
            boxes[f] = [pos[0] / w, pos[1] / h, bw / w, bh / h]

    gt = GroundTruth(masks=masks, boxes=boxes, segments=segments)
    return VideoSample(sample_id=f"s{seed:08d}", frames_u8=frames,
                       query_tokens=query_tokens, gt=gt,
                       scene_cuts=scene_cuts, seed=int(seed), fps=cfg.fps)


def make_ti_suite(seeds, ti_targets, cfg: GenConfig = None):
    """One sample per requested TI rate, achieved within 1/num_frames."""
    cfg = cfg or GenConfig()
    if len(seeds) != len(ti_targets):
        raise ConfigError("need one seed per TI target")
    samples = []
    for seed, ti in zip(seeds, ti_targets):
        if not 0 <= ti <= 1:
            raise ConfigError(f"TI target {ti} outside [0, 1]")
        present = int(round((1.0 - ti) * cfg.num_frames))
        if present == 0:
            n_seg = 0
        else:
            want = max(cfg.num_segments, 1)
            n_seg = max(1, min(want, present // 4 if present >= 8 else 1))
        sample_cfg = GenConfig(**{**cfg.__dict__,
                                  "present_frames": present,
                                  "num_segments": n_seg})
        sample = generate_sample(seed, sample_cfg)
        achieved = sample.ti
        assert abs(achieved - ti) <= 1.0 / cfg.num_frames + 1e-9
        samples.append(sample)
    return samples
