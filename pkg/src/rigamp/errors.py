"""Exception hierarchy.

Two families: :class:`ValidationError` for bad inputs (CLI exit code 1) and
:class:`NumericalError` for failures that arise while computing (exit code 2).
"""


class ValidationError(ValueError):
    """An input violates a documented precondition."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class InvalidDimensionError(ValidationError):
    pass


class InvalidParameterError(ValidationError):
    pass


class SpecMismatchError(ValidationError):
    pass


class NumericalError(ArithmeticError):
    """A computation produced something unusable (singular, NaN, ...)."""

    def __init__(self, message, layer=None, t=None):
        where = []
        if layer is not None:
            where.append(f"layer={layer}")
        if t is not None:
            where.append(f"t={t}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.layer = layer
        self.t = t


class DegenerateChannelError(NumericalError):
    """A conditioning covariance is singular beyond the ridge tolerance."""


class DegenerateModelError(NumericalError):
    pass
