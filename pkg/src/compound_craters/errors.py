"""Exception hierarchy.

Each family maps onto one CLI exit code: data problems exit with 1,
configuration problems with 2 and numerical failures with 3.
"""


class CraterError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ImpactDataError(CraterError, ValueError):
    """Invalid or malformed impact data.

    ``line`` (1-based, text formats) and ``record`` (impact id or JSON
    path) locate the offending input when known.
    """

    exit_code = 1

    def __init__(self, message, line=None, record=None):
        self.line = line
        self.record = record
        where = []
        if line is not None:
            where.append(f"line {line}")
        if record is not None:
            where.append(f"record {record}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class FilterError(ImpactDataError):
    """The annulus filter cannot be applied to an impact."""


class ConfigError(CraterError, ValueError):
    """Missing or invalid user configuration."""

    exit_code = 2


class NumericalError(CraterError, ArithmeticError):
    """A numerical stage could not produce a trustworthy result."""

    exit_code = 3


class RankDeficientFitError(NumericalError):
    pass


class ParameterSignError(NumericalError):
    """A parameter violates its definitional sign (e.g. A' <= 0)."""


class TruncatedBandError(NumericalError):
    """An unstable band touches the end of the sampled wavenumber range."""
