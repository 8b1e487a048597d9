"""Exception types shared across the package."""


class BoundPropError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(BoundPropError):
    """Operand shapes are incompatible for the requested operation."""


class GraphError(BoundPropError):
    """Malformed computational graph (dangling reference, cycle, bad attrs)."""


class OnnxImportError(BoundPropError):
    """The ONNX file could not be converted into a network graph."""


class UnsupportedOperatorError(OnnxImportError):
    """The model uses an operator outside the supported subset."""

    def __init__(self, op_type: str, message: str | None = None):
        self.op_type = op_type
        super().__init__(message or f"unsupported operator: {op_type}")


class VnnLibError(BoundPropError):
    """The VNN-LIB specification file could not be parsed."""


class AnalysisTimeout(BoundPropError):
    """Raised when the configured time budget runs out mid-analysis.

    ``partial`` carries the best bounds known at that point (a list of
    per-branch BoundedTensor, or None when nothing was computed yet).
    """

    def __init__(self, message: str = "analysis timed out", partial=None):
        self.partial = partial
        super().__init__(message)
