"""Exception types raised across the package."""


class FairFedError(Exception):
    pass


class ConfigurationError(FairFedError, ValueError):
    """Invalid user-facing configuration (counts, variances, noise plans...)."""


class ContractError(FairFedError, ValueError):
    """A caller broke a function precondition."""


class ShapeError(ContractError):
    pass


class NumericError(FairFedError, ArithmeticError):
    """NaN/zero where a finite positive value is required."""


class FormatError(FairFedError, ValueError):
    """Malformed binary input. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
