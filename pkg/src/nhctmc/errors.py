"""Exception hierarchy shared by all modules."""


class NHCTMCError(Exception):
    """Base class for every error raised by :mod:`nhctmc`."""


class DimensionMismatch(NHCTMCError, ValueError):
    pass


class OutOfHorizon(NHCTMCError, ValueError):
    pass


class NonnegativityViolation(NHCTMCError, ValueError):
    pass


class InvalidRates(NHCTMCError, ValueError):
    """A rate matrix violates the sign or row-sum constraints."""

    def __init__(self, report):
        self.report = report
        first = report.violations[0] if report.violations else None
        msg = "invalid rate matrix"
        if first is not None:
            t, row, desc = first
            msg += f": {desc} (t={t:g}, row {row})"
        super().__init__(msg)


class GridMismatch(NHCTMCError, ValueError):
    pass


class NoConvergence(NHCTMCError, RuntimeError):
    pass


class OffGrid(NHCTMCError, ValueError):
    pass


class AtDiscontinuity(NHCTMCError, ValueError):
    pass


class InvalidDistribution(NHCTMCError, ValueError):
    pass


class VacuousResurrection(NHCTMCError, ValueError):
    """Resurrection requested for a conservative rate model."""


class ActionNotAvailable(NHCTMCError, KeyError):
    pass


class DegenerateConditioning(NHCTMCError, ZeroDivisionError):
    pass


class ConfigError(NHCTMCError, ValueError):
    """Config parse or schema error, located by field path and line."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
