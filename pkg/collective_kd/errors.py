"""
Collective KD - Exceptions
"""


class CollectiveKDError(Exception):
    """Base class for all library errors"""


class ValidationError(CollectiveKDError, ValueError):
    """Input or configuration rejected before any work is done"""


class FormatError(ValidationError):
    """Malformed file: bad magic, bad version, truncation, bad TSV line"""


class DimensionMismatchError(ValidationError):
    """Matrix or projection dimensions do not line up"""


class EmptyInputError(ValidationError):
    """An operation received an empty sequence it cannot work with"""


class InsufficientPointsError(CollectiveKDError, ValueError):
    """Not enough points / passages to satisfy the requested count"""


class UnknownIdError(CollectiveKDError, KeyError):
    """A query, passage or record id could not be resolved"""

    def __str__(self):
        # KeyError quotes its argument; keep the message readable
        return str(self.args[0]) if self.args else ""
