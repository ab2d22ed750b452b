"""Exception hierarchy.

Validation failures derive from :class:`ValidationError` and numeric
failures from :class:`NumericError`; the CLI maps the two families to
exit codes 1 and 2.
"""


class OtflowError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(OtflowError, ValueError):
    pass


class NumericError(OtflowError, ArithmeticError):
    pass


class DimMismatch(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class TimeOutOfRange(ValidationError):
    pass


class BadReparameterization(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class TooFewSeeds(ValidationError):
    pass


class TooFewCheckpoints(ValidationError):
    pass


class NotSpd(NumericError):
    pass


class NoConvergence(NumericError):
    pass


class SingularInterpolation(NumericError):
    pass


class NonFiniteState(NumericError):
    pass


class NonFiniteLoss(NumericError):
    pass


class DegeneratePath(NumericError):
    """Endpoints coincide, so a ratio against their displacement is undefined."""


class FormatError(ValidationError):
    pass


class IoError(OtflowError, OSError):
    pass


class ConfigError(ValidationError):
    pass


class ParseError(ConfigError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class UnknownKey(ConfigError):
    def __init__(self, field):
        self.field = field
        super().__init__(f"unknown configuration key {field!r}")


class RangeError(ConfigError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
