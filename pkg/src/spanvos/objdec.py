"""Object-level decoding: query bank, per-frame aggregation, masks, boxes.

The coarsest enhanced scale is pooled into one feature row per query via
cross-attention.  Masks come from a top-down FPN over all enhanced scales
followed by per-query dynamic 1x1 convolutions (kernel weights emitted by a
controller MLP from the object features).  Boxes come from an MLP+sigmoid.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .encoder import flatten_spatial
from .errors import ShapeError
from .nn import Conv2d, CrossAttention, MLP, Module, ModuleList


class QueryBuilder(Module):
    """Mean-pool enhanced text, repeat per query, add learned offsets."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.offsets = Tensor(
            rng.normal(0, 0.5, (cfg.num_queries, cfg.embed_dim)).astype(ad.default_dtype()),
            requires_grad=True)

    def __call__(self, text_enh):
        pooled = ad.mean(text_enh, axis=0, keepdims=True)     # (1, C)
        return ad.add(self.offsets, pooled)                   # (N_q, C)


class ObjectAggregator(Module):
    """f_obj = Cross_Attn(queries, flattened coarsest scale), per frame."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.attn = CrossAttention(cfg.embed_dim, rng, cfg.num_heads)

    def __call__(self, queries, top_scale):
        """queries: (N_q, C); top_scale: (T, C, h, w) -> (T, N_q, C)."""
        return self.attn(queries, flatten_spatial(top_scale))


def _dynamic_layer_dims(cfg: ModelConfig):
    """Channel sizes of the stacked 1x1 dynamic conv (coords appended)."""
    dims = [cfg.mask_channels + 2]
    for _ in range(cfg.dynamic_layers - 1):
        dims.append(cfg.mask_channels)
    dims.append(1)
    return dims


def dynamic_param_count(cfg: ModelConfig):
    dims = _dynamic_layer_dims(cfg)
    return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))


class MaskDecoder(Module):
    """Cross-modal FPN plus per-query dynamic convolutions."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        c, f = cfg.embed_dim, cfg.fpn_channels
        self.cfg = cfg
        self.laterals = ModuleList(
            Conv2d(c, f, kernel=1, stride=1, pad=0, rng=rng)
            for _ in range(cfg.num_scales))
        self.refine = Conv2d(f, f, kernel=3, stride=1, pad=1, rng=rng)
        self.project = Conv2d(f, cfg.mask_channels, kernel=1, stride=1, pad=0, rng=rng)
        self.controller = MLP(
            [c, cfg.controller_hidden, dynamic_param_count(cfg)], rng)
        self._coord_cache = {}

    def fuse(self, scales):
        """Top-down FPN ending at the finest scale, upsampled to input size.

        Output: (T, mask_channels + 2, H, W) with normalized coordinate
        channels appended.
        """
        if len(scales) < 2:
            raise ShapeError("mask decoding needs at least 2 pyramid scales")
        laterals = [lat(s) for lat, s in zip(self.laterals, scales)]
        x = laterals[-1]
        for lateral in reversed(laterals[:-1]):
            x = ad.add(ad.upsample_nearest(x, 2), lateral)
        x = ad.relu(self.refine(x))
        x = self.project(x)
        x = ad.upsample_bilinear(x, 4)
        t, h, w = x.shape[0], x.shape[2], x.shape[3]
        coords = self._coords(t, h, w, x.dtype)
        return ad.concat([x, coords], axis=1)

    def _coords(self, t, h, w, dtype):
        key = (t, h, w, np.dtype(dtype).str)
        if key not in self._coord_cache:
            ys = np.linspace(-1, 1, h, dtype=dtype)
            xs = np.linspace(-1, 1, w, dtype=dtype)
            grid = np.stack([np.tile(xs, (h, 1)), np.tile(ys[:, None], (1, w))])
            self._coord_cache[key] = np.ascontiguousarray(
                np.broadcast_to(grid, (t, 2, h, w)))
        return Tensor(self._coord_cache[key])

    def __call__(self, f_obj, scales):
        """f_obj: (T, N_q, C); scales: enhanced pyramid -> (N_q, T, H, W) logits."""
        fused = self.fuse(scales)
        t, h, w = fused.shape[0], fused.shape[2], fused.shape[3]
        n_q = f_obj.shape[1]
        hw = h * w
        feats = flatten_spatial(fused)                         # (T, HW, Cm+2)
        params = self.controller(f_obj)                        # (T, N_q, P)
        dims = _dynamic_layer_dims(self.cfg)
        x = ad.reshape(feats, (t, 1, hw, dims[0]))             # queries share the map
        offset = 0
        for li in range(len(dims) - 1):
            din, dout = dims[li], dims[li + 1]
            wsize = din * dout
            wq = ad.reshape(params[:, :, offset:offset + wsize], (t, n_q, din, dout))
            bq = ad.reshape(params[:, :, offset + wsize:offset + wsize + dout],
                            (t, n_q, 1, dout))
            offset += wsize + dout
            x = ad.add(ad.matmul(x, wq), bq)
            if li + 1 < len(dims) - 1:
                x = ad.relu(x)
        return ad.transpose(ad.reshape(x, (t, n_q, h, w)), (1, 0, 2, 3))


class BoxHead(Module):
    """MLP + sigmoid emitting normalized (cx, cy, w, h) per query per frame."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.mlp = MLP([cfg.embed_dim, cfg.head_hidden, 4], rng)

    def __call__(self, f_obj):
        """f_obj: (T, N_q, C) -> (N_q, T, 4) in [0, 1]."""
        boxes = ad.sigmoid(self.mlp(f_obj))
        return ad.transpose(boxes, (1, 0, 2))
