"""The full video-text segmentation model.

Pipeline per video: embed the query tokens; encode every frame into a
feature pyramid; run mutual text-visual enhancement; pool the enhanced text
into a query bank; aggregate per-frame object features; decode masks and
boxes; temporally decode sequence/relevance features; apply the three
heads.  The result is a PredictionSet for the loss or for assembly.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .encoder import MutualEnhancer, TextEmbedder, VisualEncoder
from .nn import Module
from .objdec import BoxHead, MaskDecoder, ObjectAggregator, QueryBuilder
from .temporal import (
    CoupledSRD,
    DecoupledSRD,
    PredictionSet,
    RelevanceHead,
    SequenceHead,
    SpanHead,
)


class SpanVosModel(Module):
    def __init__(self, cfg: ModelConfig, rng=None, seed=0):
        super().__init__()
        cfg.validate()
        rng = rng or np.random.default_rng(seed)
        self.cfg = cfg
        self.embedder = TextEmbedder(cfg, rng)
        self.encoder = VisualEncoder(cfg, rng)
        self.enhancer = MutualEnhancer(cfg, rng)
        self.query_builder = QueryBuilder(cfg, rng)
        self.aggregator = ObjectAggregator(cfg, rng)
        self.mask_decoder = MaskDecoder(cfg, rng)
        self.box_head = BoxHead(cfg, rng)
        self.srd = CoupledSRD(cfg, rng) if cfg.coupled_srd else DecoupledSRD(cfg, rng)
        self.span_head = SpanHead(cfg, rng)
        self.sequence_head = SequenceHead(cfg, rng)
        self.relevance_head = RelevanceHead(cfg, rng)

    @property
    def dtype(self):
        return self.parameters()[0].dtype

    def __call__(self, frames, token_ids):
        """frames: (T, 3, H, W) array or Tensor in [0, 1]; token_ids: 1-D ints."""
        if not isinstance(frames, Tensor):
            frames = Tensor(np.asarray(frames, dtype=self.dtype))
        text = self.embedder(token_ids)                       # (L, C)
        scales = self.encoder(frames)
        enh_scales, text_enh = self.enhancer(scales, text)    # text_enh: (T, L, C)
        text_video = ad.mean(text_enh, axis=0)                # (L, C)
        f_q = self.query_builder(text_video)                  # (N_q, C)
        f_obj = self.aggregator(f_q, enh_scales[-1])          # (T, N_q, C)
        mask_logits = self.mask_decoder(f_obj, enh_scales)    # (N_q, T, H, W)
        boxes = self.box_head(f_obj)                          # (N_q, T, 4)
        f_seq, f_rel = self.srd(text, f_obj, f_q)             # (N_q, T, C) each
        span_s, span_e, s_logits, e_logits = self.span_head(f_seq)
        return PredictionSet(
            mask_logits=mask_logits,
            boxes=boxes,
            span_start=span_s,
            span_end=span_e,
            span_start_logits=s_logits,
            span_end_logits=e_logits,
            seq_align=self.sequence_head(f_seq),
            relevance=self.relevance_head(f_rel),
        )


def build_model(cfg: ModelConfig, seed=0, precision="f64"):
    """Construct a model with weights drawn at the requested precision."""
    dtype = np.float64 if precision == "f64" else np.float32
    with ad.using_dtype(dtype):
        return SpanVosModel(cfg, rng=np.random.default_rng(seed))
