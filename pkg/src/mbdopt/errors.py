"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A schedule or config parameter is outside its valid range."""


class EvaluationError(RuntimeError):
    """A cost/constraint callback returned a non-finite value for a candidate."""


class DegenerateBatchError(RuntimeError):
    """Every candidate in a batch has log-weight -inf; no usable weights."""
