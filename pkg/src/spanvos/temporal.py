"""Temporal encoding, the sequence/relevance decoder, heads, and assembly.

Object features are self-attended over time (sinusoidal positions enter
queries and keys only, so time-constant inputs stay time-constant).  Two
decoupled residual cross-attention branches then align them with the text:
a sequence branch over the temporally encoded features and a relevance
branch over the per-frame features.  MLP+sigmoid heads emit span start/end
probabilities, a per-query text alignment, and per-frame relevance; the
final masks are gated to the argmax span of the best-aligned query.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .nn import CrossAttention, MLP, Module, ModuleList


def sinusoidal_positions(length, dim, dtype=np.float64):
    """Fixed transformer position table (length, dim)."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(dim, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, 2 * (i // 2) / dim)
    table = np.where(i % 2 == 0, np.sin(angles), np.cos(angles))
    return table.astype(dtype)


class TemporalBlock(Module):
    """Pre-norm self-attention over the time axis plus a feed-forward step."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.attn = CrossAttention(cfg.embed_dim, rng, cfg.num_heads)
        self.ffn = MLP([cfg.embed_dim, cfg.ffn_dim, cfg.embed_dim], rng)
        self.eps = cfg.layer_norm_eps

    def __call__(self, x, pe):
        h = ad.layer_norm(x, axis=-1, eps=self.eps)
        qk = ad.add(h, pe)
        attn = self.attn.forward_qkv(qk, qk, h)     # values carry no position
        x = ad.add(x, attn)
        ff = self.ffn(ad.layer_norm(x, axis=-1, eps=self.eps))
        return ad.add(x, ff)


class TemporalEncoder(Module):
    """Per-query self-attention over frames, (N_q, T, C) -> (N_q, T, C)."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.dim = cfg.embed_dim
        self.blocks = ModuleList(TemporalBlock(cfg, rng) for _ in range(cfg.temporal_blocks))

    def __call__(self, x):
        pe = Tensor(sinusoidal_positions(x.shape[1], self.dim, dtype=x.dtype))
        for block in self.blocks:
            x = block(x, pe)
        return x


class CrossAttnChain(Module):
    """Residual cross-attention blocks: x <- x + Attn(norm(x), text)."""

    def __init__(self, cfg: ModelConfig, rng, depth):
        super().__init__()
        self.blocks = ModuleList(CrossAttention(cfg.embed_dim, rng, cfg.num_heads)
                                 for _ in range(depth))
        self.eps = cfg.layer_norm_eps

    def __call__(self, x, text):
        for block in self.blocks:
            x = ad.add(x, block(ad.layer_norm(x, axis=-1, eps=self.eps), text))
        return x


class DecoupledSRD(Module):
    """Two parallel branches with no mixing of roles.

    Sequence branch: temporally encoded object features attend to text.
    Relevance branch: per-frame object features (offset by their query row)
    attend to text.  Zeroing all attention projections leaves each branch's
    residual input untouched.
    """

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.temporal = TemporalEncoder(cfg, rng)
        self.seq_chain = CrossAttnChain(cfg, rng, cfg.srd_blocks)
        self.rel_chain = CrossAttnChain(cfg, rng, cfg.srd_blocks)

    def __call__(self, text, f_obj, f_q):
        """text: (L, C); f_obj: (T, N_q, C); f_q: (N_q, C).

        Returns (f_seq, f_rel), both (N_q, T, C).
        """
        obj_qt = ad.transpose(f_obj, (1, 0, 2))
        f_seq = self.seq_chain(self.temporal(obj_qt), text)
        n_q, c = f_q.shape
        rel_in = ad.add(obj_qt, ad.reshape(f_q, (n_q, 1, c)))
        f_rel = self.rel_chain(rel_in, text)
        return f_seq, f_rel


class CoupledSRD(Module):
    """Ablation variant: concatenate text, object, and query tokens and run
    joint self-attention; both outputs come from the object positions."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.temporal = TemporalEncoder(cfg, rng)
        self.blocks = ModuleList(CrossAttention(cfg.embed_dim, rng, cfg.num_heads)
                                 for _ in range(cfg.srd_blocks))
        self.eps = cfg.layer_norm_eps

    def __call__(self, text, f_obj, f_q):
        t, n_q, c = f_obj.shape
        obj = ad.reshape(self.temporal(ad.transpose(f_obj, (1, 0, 2))), (n_q * t, c))
        x = ad.concat([text, obj, f_q], axis=0)
        for block in self.blocks:
            h = ad.layer_norm(x, axis=-1, eps=self.eps)
            x = ad.add(x, block(h, h))
        l = text.shape[0]
        out = ad.reshape(x[l:l + n_q * t], (n_q, t, c))
        return out, out


class SpanHead(Module):
    """Start/end probabilities per query per frame (MLP + sigmoid)."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.mlp = MLP([cfg.embed_dim, cfg.head_hidden, 2], rng)

    def __call__(self, f_seq):
        logits = self.mlp(f_seq)                     # (N_q, T, 2)
        start_logits = logits[:, :, 0]
        end_logits = logits[:, :, 1]
        return (ad.sigmoid(start_logits), ad.sigmoid(end_logits),
                start_logits, end_logits)


class SequenceHead(Module):
    """Alignment score per query from time-pooled sequence features."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.mlp = MLP([cfg.embed_dim, cfg.head_hidden, 1], rng)

    def __call__(self, f_seq):
        pooled = ad.mean(f_seq, axis=1)              # (N_q, C)
        return ad.sigmoid(ad.reshape(self.mlp(pooled), (-1,)))


class RelevanceHead(Module):
    """Per-frame target relevance (MLP + sigmoid)."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.mlp = MLP([cfg.embed_dim, cfg.head_hidden, 1], rng)

    def __call__(self, f_rel):
        n_q, t = f_rel.shape[0], f_rel.shape[1]
        return ad.sigmoid(ad.reshape(self.mlp(f_rel), (n_q, t)))


@dataclass
class PredictionSet:
    """Everything inference and the loss consume, one video."""

    mask_logits: Tensor        # (N_q, T, H, W)
    boxes: Tensor              # (N_q, T, 4) in [0, 1]
    span_start: Tensor         # (N_q, T) probabilities
    span_end: Tensor           # (N_q, T)
    span_start_logits: Tensor  # (N_q, T)
    span_end_logits: Tensor    # (N_q, T)
    seq_align: Tensor          # (N_q,)
    relevance: Tensor          # (N_q, T)


@dataclass
class FinalOutput:
    """Selected query with its span-gated binary masks."""

    query_index: int
    span: tuple                # inclusive (start, end) or None for empty
    masks: np.ndarray          # (T, H, W) bool, all-background outside span
    score: float = 0.0
    relevance: np.ndarray = None


def _np(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _np_sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def assemble(pred: PredictionSet, threshold=0.5, force_full_span=False):
    """Select the best-aligned query and gate its masks to its span.

    Ties in every argmax break toward the smallest index.  If the end frame
    precedes the start frame the prediction is empty.  With
    `force_full_span` the span covers the whole video (span head disabled).
    """
    c = _np(pred.seq_align)
    j = int(np.argmax(c))
    t = _np(pred.span_start).shape[1]
    if force_full_span:
        t_start, t_end = 0, t - 1
    else:
        t_start = int(np.argmax(_np(pred.span_start)[j]))
        t_end = int(np.argmax(_np(pred.span_end)[j]))
    probs = _np_sigmoid(_np(pred.mask_logits)[j])
    masks = probs > threshold
    if t_end < t_start:
        span = None
        masks = np.zeros_like(masks)
    else:
        span = (t_start, t_end)
        gate = np.zeros(t, dtype=bool)
        gate[t_start:t_end + 1] = True
        masks = masks & gate[:, None, None]
    return FinalOutput(query_index=j, span=span, masks=masks,
                       score=float(c[j]), relevance=np.array(_np(pred.relevance)[j]))
