"""Exception types raised across the package."""


class DvqError(Exception):
    """Base class for all errors raised by dvq."""


class InvalidInputError(DvqError, ValueError):
    """Input data or parameters violate an operation's preconditions."""


class EmptyResultError(InvalidInputError):
    """No admissible window/pair could be formed from the input."""


class SeriesZeroDivisionError(InvalidInputError, ZeroDivisionError):
    """A returns transform hit a zero denominator.

    ``time`` is the 1-based index of the offending value.
    """

    def __init__(self, time):
        self.time = time
        super().__init__(f"zero value at t={time} cannot be used as a returns denominator")


class GapBoundaryError(InvalidInputError):
    """A reconstruction ran into a missing value."""


class ZeroSpreadError(InvalidInputError):
    """All points coincide; distances carry no information."""


class PlacementError(DvqError):
    """Random gaps could not be placed under the constraints."""


class UnfillableGapError(InvalidInputError):
    """A gap lacks the known context needed to seed a forecast."""
