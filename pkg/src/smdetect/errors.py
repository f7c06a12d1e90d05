"""Exception types raised across the package."""


class SMDetectError(Exception):
    """Base class for all errors raised by :mod:`smdetect`."""


class NotHermitian(SMDetectError, ValueError):
    pass


class ExplicitNotPSD(SMDetectError, ValueError):
    pass


class TemporalGramNotPSD(SMDetectError, ValueError):
    pass


class NotPositiveDefinite(SMDetectError, ValueError):
    pass


class UnsupportedOrder(SMDetectError, ValueError):
    pass


class BadLength(SMDetectError, ValueError):
    pass


class NotInConstellation(SMDetectError, ValueError):
    pass


class ShapeMismatch(SMDetectError, ValueError):
    pass


class SearchSpaceTooLarge(SMDetectError, ValueError):
    pass


class EmptyCandidateSet(SMDetectError, ValueError):
    pass


class SingularT(SMDetectError, ValueError):
    pass


class RankDeficientTruncation(SMDetectError, ValueError):
    pass


class IntegrationNotConverged(SMDetectError, RuntimeError):
    pass


class MissingBlockIndex(SMDetectError, ValueError):
    pass


class ParseError(SMDetectError, ValueError):
    """Scenario file could not be parsed or validated.

    The message names the offending field (and line, when the JSON decoder
    reports one).
    """

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class BudgetExceeded(SMDetectError, RuntimeWarning):
    """Stop rule hit the bit budget before collecting the requested errors."""
