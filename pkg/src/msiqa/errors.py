"""Exception types raised across the package."""


class ShapeMismatchError(ValueError):
    """Tensor or vector shapes violate an operation's contract."""


class ParameterMismatchError(ValueError):
    """A parameter set does not fit the architecture it is applied to."""


class UndefinedCorrelationError(ValueError):
    """Correlation requested for an input with zero variance."""


class ManifestError(ValueError):
    """Malformed manifest, rater file, or dataset directory."""
