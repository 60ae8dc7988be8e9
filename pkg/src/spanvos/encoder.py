"""Frame encoding, query embedding, and mutual text-visual enhancement.

Each frame becomes a pyramid of progressively halved feature maps (stride-4
stem, then stride-2 blocks).  Text token embeddings and the pyramid then
enhance each other: every scale's features attend to the text, and the text
is updated residually from each enhanced scale in turn, coarsest last.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .errors import ShapeError, VocabError
from .nn import Conv2d, CrossAttention, Linear, Module, ModuleList

MAX_QUERY_TOKENS = 16


@dataclass
class FeaturePyramid:
    """Multi-scale features for one frame: scales[i] is (C, H_i, W_i)."""

    scales: list
    frame_index: int = 0

    def __post_init__(self):
        for a, b in zip(self.scales, self.scales[1:]):
            if b.shape[-2] > a.shape[-2] // 2 or b.shape[-1] > a.shape[-1] // 2:
                raise ShapeError("pyramid scales must at least halve spatially")


@dataclass
class TextFeatures:
    """Token embeddings (L, C); `enhanced` is filled after enhancement."""

    tokens: Tensor
    enhanced: Tensor = None

    @property
    def length(self):
        return self.tokens.shape[0]


class VisualEncoder(Module):
    """Small CNN emitting `num_scales` maps; input H, W must divide 2^(N+1)."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        c = cfg.embed_dim
        self.num_scales = cfg.num_scales
        self.stem_patch = Conv2d(3, c, kernel=4, stride=4, pad=0, rng=rng)
        self.stem_refine = Conv2d(c, c, kernel=3, stride=1, pad=1, rng=rng)
        self.down_blocks = ModuleList(
            Conv2d(c, c, kernel=3, stride=2, pad=1, rng=rng)
            for _ in range(cfg.num_scales - 1))

    def __call__(self, frames):
        """frames: (T, 3, H, W) tensor -> list of (T, C, H_i, W_i), fine to coarse."""
        h, w = frames.shape[-2], frames.shape[-1]
        divisor = 2 ** (self.num_scales + 1)
        if h % divisor or w % divisor:
            raise ShapeError(f"frame size {h}x{w} must be a multiple of {divisor}")
        x = ad.relu(self.stem_patch(frames))
        x = ad.relu(self.stem_refine(x))
        scales = [x]
        for block in self.down_blocks:
            x = ad.relu(block(x))
            scales.append(x)
        return scales

    def encode_frame(self, frame, frame_index=0):
        """Single-frame wrapper returning a FeaturePyramid."""
        scales = self(ad.reshape(frame, (1,) + tuple(frame.shape)))
        return FeaturePyramid(scales=[s[0] for s in scales], frame_index=frame_index)


class TextEmbedder(Module):
    """Learned token table plus learned positional offsets."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.vocab_size = cfg.vocab_size
        dt = ad.default_dtype()
        self.table = Tensor(rng.normal(0, 0.5, (cfg.vocab_size, cfg.embed_dim)).astype(dt),
                            requires_grad=True)
        self.positions = Tensor(
            rng.normal(0, 0.1, (MAX_QUERY_TOKENS, cfg.embed_dim)).astype(dt),
            requires_grad=True)

    def __call__(self, token_ids):
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise VocabError("query must be a non-empty sequence of token ids")
        if ids.size > MAX_QUERY_TOKENS:
            raise VocabError(f"query longer than {MAX_QUERY_TOKENS} tokens")
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise VocabError(f"token id outside vocabulary of size {self.vocab_size}")
        emb = ad.index_select(self.table, ids, axis=0)
        pos = self.positions[:int(ids.size)]
        return ad.add(emb, pos)


def flatten_spatial(x):
    """(T, C, H, W) -> (T, H*W, C), rows ordered H then W."""
    t, c = x.shape[0], x.shape[1]
    hw = x.shape[2] * x.shape[3]
    return ad.transpose(ad.reshape(x, (t, c, hw)), (0, 2, 1))


def unflatten_spatial(x, height, width):
    """(T, H*W, C) -> (T, C, H, W)."""
    t, c = x.shape[0], x.shape[2]
    return ad.reshape(ad.transpose(x, (0, 2, 1)), (t, c, height, width))


class MutualEnhancer(Module):
    """Mutual cross-attention between pyramid scales and text tokens.

    Per scale i (fine to coarse): the projected scale attends to the original
    token embeddings, and the text state is updated residually by attending
    to that enhanced scale.  The visual side carries no residual; the text
    side is exactly a residual chain, so zeroed projections leave it intact.
    """

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        c = cfg.embed_dim
        n = cfg.num_scales if cfg.per_scale_attention else 1
        self.num_scales = cfg.num_scales
        self.per_scale = cfg.per_scale_attention
        self.scale_proj = ModuleList(Linear(c, c, rng) for _ in range(cfg.num_scales))
        self.vis_attn = ModuleList(CrossAttention(c, rng, cfg.num_heads) for _ in range(n))
        self.txt_attn = ModuleList(CrossAttention(c, rng, cfg.num_heads) for _ in range(n))

    def _attn(self, bank, i):
        return bank[i if self.per_scale else 0]

    def __call__(self, scales, text):
        """scales: list of (T, C, H_i, W_i); text: (L, C).

        Returns (enhanced scales, per-frame enhanced text (T, L, C)).
        """
        if len(scales) != self.num_scales:
            raise ShapeError(f"expected {self.num_scales} scales, got {len(scales)}")
        enhanced = []
        e = text
        for i, scale in enumerate(scales):
            h, w = scale.shape[2], scale.shape[3]
            p = self.scale_proj[i](flatten_spatial(scale))
            f_enh = self._attn(self.vis_attn, i)(p, text)
            e = ad.add(e, self._attn(self.txt_attn, i)(e, f_enh))
            enhanced.append(unflatten_spatial(f_enh, h, w))
        return enhanced, e

    def enhance_frame(self, pyramid: FeaturePyramid, text: TextFeatures):
        """Single-frame wrapper over the batched path."""
        batched = [ad.reshape(s, (1,) + tuple(s.shape)) for s in pyramid.scales]
        enh, e = self(batched, text.tokens)
        out = FeaturePyramid(scales=[s[0] for s in enh], frame_index=pyramid.frame_index)
        return out, TextFeatures(tokens=text.tokens, enhanced=e[0])
