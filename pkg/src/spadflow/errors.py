"""Exception types shared across the package."""


class SpadflowError(Exception):
    """Base class for all package errors."""


class InvalidInputError(SpadflowError, ValueError):
    pass


class DegenerateBeliefError(SpadflowError, ArithmeticError):
    """A projected Gaussian ended up with a non-positive or non-finite variance."""


class DegeneratePosteriorError(SpadflowError, ArithmeticError):
    """The unnormalized posterior mass vanished (all weights zero or non-finite)."""


class ParseError(SpadflowError, ValueError):
    """Malformed binary file or configuration text."""
