"""Exception types raised across the package."""


class QPCError(Exception):
    """Base class for package errors."""


class DimensionError(QPCError, ValueError):
    """Inputs do not have conforming shapes."""


class RankDeficiencyError(QPCError, ValueError):
    """The stacked covariate design does not have full column rank."""


class SingularityError(QPCError, ArithmeticError):
    """A matrix that must be inverted is (numerically) singular."""


class DegenerateError(QPCError, ValueError):
    """A quantity needed for estimation is degenerate (zero covariate, zero residual)."""


class DataError(QPCError, ValueError):
    """Input data could not be parsed or is not a balanced panel."""
