"""
Error types for the private regression testing toolkit
Every library error is a ValueError so callers can catch bad input in one place
"""

from typing import Optional


class DPTestError(ValueError):
    """Base class for all toolkit errors"""


class InvalidBounds(DPTestError):
    """Clip lower bound exceeds upper bound"""


class InvalidConfig(DPTestError):
    """A configuration dataclass holds an out-of-range value"""


class SingularDesign(DPTestError):
    """X^T X is not invertible (constant or all-zero independent variable)"""


class ZeroVariance(DPTestError):
    """Residual variance is zero, so the F statistic is undefined"""


class NegativeVariance(DPTestError):
    """Sample variance of x is negative (only possible for noised moments)"""


class NonpositiveDenominator(DPTestError):
    """Residual sum of squares in the E/F/G form is not positive"""


class DegenerateStat(DPTestError):
    """A private statistic cannot be evaluated (e.g. slope variance <= 0)"""


class NonpositiveVariancePiece(DegenerateStat):
    """A private variance piece used by a test statistic is not positive"""


class InvalidSpec(DPTestError):
    """Generator specification is inconsistent"""


class InsufficientSamples(DPTestError):
    """Too few samples requested for a distributional diagnostic"""


class MissingColumn(DPTestError):
    """A requested column is not in the CSV header"""


class MoreThanTwoGroups(DPTestError):
    """The group column has more than two distinct labels"""


class ParseError(DPTestError):
    """A CSV cell could not be parsed as a decimal real"""

    def __init__(self, message: str, row: Optional[int] = None,
                 column: Optional[str] = None):
        if row is not None and column is not None:
            message = f"{message} (row {row}, column {column})"
        super().__init__(message)
        self.row = row        # 1-based data row (header excluded)
        self.column = column


class ResultsWriteError(DPTestError, OSError):
    """Results file could not be written"""
