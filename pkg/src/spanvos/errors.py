"""Exception types shared across the package."""


class SpanVosError(Exception):
    """Base class for all package errors."""


class ShapeError(SpanVosError):
    """Operands have incompatible shapes."""


class AxisError(SpanVosError):
    """An axis argument is out of range for the given tensor."""


class NonFiniteError(SpanVosError):
    """A forward computation produced NaN or Inf."""


class NonScalarError(SpanVosError):
    """backward() was called on a tensor that is not a scalar."""


class VocabError(SpanVosError):
    """A token id is outside the embedding vocabulary, or the query is empty."""


class ConfigError(SpanVosError):
    """A configuration value is invalid or inconsistent."""


class InvalidSpanError(SpanVosError):
    """A temporal span has end before start."""


class IoError(SpanVosError):
    """A dataset or artifact file could not be read or written."""


class SchemaError(SpanVosError):
    """A serialized artifact does not match the expected schema or version."""
