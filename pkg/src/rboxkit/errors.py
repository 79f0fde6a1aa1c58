"""Exception types shared across the toolkit."""


class RBoxKitError(Exception):
    """Base class for all toolkit errors."""


class InvalidBoxError(RBoxKitError, ValueError):
    """Box with non-finite fields or non-positive / degenerate extents."""


class DecodeOverflowError(RBoxKitError, OverflowError):
    """Decoded extent exceeds the sane pixel range (exp blow-up)."""


class DegeneratePairError(RBoxKitError, ValueError):
    """Zero regression residual paired with imperfect overlap.

    The direction of the gradient cannot be normalized; this indicates an
    inconsistent codec state rather than a perfect prediction.
    """


class EmptyBatchError(RBoxKitError, ValueError):
    """Loss requested over a batch with no anchors."""


class AnnotationParseError(RBoxKitError, ValueError):
    """Malformed annotation line; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no
