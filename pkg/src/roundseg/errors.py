"""Exception types shared across the package."""


class RoundsegError(Exception):
    """Base class for all package-specific errors."""


class EmptyMask(RoundsegError):
    """A mask with zero set pixels where a nonempty one is required."""


class SchemaViolation(RoundsegError):
    """A serialized record or in-memory value breaks a declared invariant."""


class PlacementFailure(RoundsegError):
    """Scene synthesis could not place all entities within the attempt budget."""


class UnplannableScene(RoundsegError):
    """No relation in the scene supports planning another conversation round."""


class ShapeError(RoundsegError):
    """Tensor or image dimensions incompatible with the operation."""


class NoSegToken(RoundsegError):
    """The decoded answer contains no [SEG] token, so no mask can be produced."""


class ContextOverflow(RoundsegError):
    """Prompt assembly exceeds the model's context capacity."""


class DivergenceError(RoundsegError):
    """Training loss became non-finite."""


class DegenerateLabels(RoundsegError):
    """A classifier training set is missing one of the label classes."""


class DimMismatch(RoundsegError):
    """Two masks passed to a metric do not share dimensions."""


class EmptyResults(RoundsegError):
    """Aggregation was asked to summarize an empty result list."""


class EmptyReference(RoundsegError):
    """A referenced round's predicted mask is empty and cannot guide a crop."""
