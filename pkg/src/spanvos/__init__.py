"""Referring video object segmentation with temporal span prediction.

Subpackages cover: a small autodiff tensor engine, the multimodal
encoder/decoder model, spatial-temporal losses and query matching, the
evaluation protocol (region/contour/temporal metrics), a synthetic
untrimmed-video benchmark generator, and a CLI tying them together.
"""

__version__ = "0.1.0"

from . import autodiff
from .errors import (
    AxisError,
    ConfigError,
    InvalidSpanError,
    IoError,
    NonFiniteError,
    NonScalarError,
    SchemaError,
    ShapeError,
    SpanVosError,
    VocabError,
)

__all__ = [
    "autodiff",
    "AxisError",
    "ConfigError",
    "InvalidSpanError",
    "IoError",
    "NonFiniteError",
    "NonScalarError",
    "SchemaError",
    "ShapeError",
    "SpanVosError",
    "VocabError",
]
