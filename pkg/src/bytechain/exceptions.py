"""Error types raised across the package.

Kept in one place so CLI exit-code mapping stays a flat lookup.
"""


class BytechainError(Exception):
    """Base class for all package errors."""


class EmptyInput(BytechainError):
    """Tokenizer got an empty byte string."""


class SequenceTooLong(BytechainError):
    """Token sequence exceeds the configured maximum length."""


class EmptyMaskPlan(BytechainError):
    """A masked-token loss was requested with no masked positions."""


class LabelRangeError(BytechainError):
    """A class label id is outside the head's class count."""


class DegenerateLabel(BytechainError):
    """A multilabel target has no positive entry."""


class ZeroNorm(BytechainError):
    """Cosine similarity of a zero-norm vector is undefined."""


class InternalError(BytechainError):
    """Invariant violation inside the training engine."""


class EmptyEvaluation(BytechainError):
    """A metric was requested over an empty evaluation set."""


class EmptyDataset(BytechainError):
    """A training stage received no usable examples."""


class IncompatibleCheckpoint(BytechainError):
    """Checkpoint model configuration does not match the requested stage."""


class ChecksumError(BytechainError):
    """Checkpoint payload digest mismatch."""


class VersionError(BytechainError):
    """Checkpoint format version is not supported."""


class GraphInvalid(BytechainError):
    """Task graph violates the tree contract (root/parents/cycles)."""

    def __init__(self, message: str, node_id: str | None = None):
        super().__init__(message)
        self.node_id = node_id


class MissingLabel(BytechainError):
    """A record lacks the label field a task needs."""


class ParseError(BytechainError):
    """Malformed corpus or config file; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CannotSplit(BytechainError):
    """Too few split keys to form two non-empty parts."""
