class RobustSelError(Exception):
    """Base class for all errors raised by robustsel."""


class DataError(RobustSelError):
    """Bad input data: schema mismatch, unparseable cells, empty or
    unstratifiable tables."""


class DegenerateError(RobustSelError):
    """A computation has no meaningful result for the given input, e.g. a
    selection method that scores every feature zero."""
