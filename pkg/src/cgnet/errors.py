"""Exception hierarchy shared by all cgnet modules."""


class CGNetError(Exception):
    """Base class for every error raised by cgnet."""


class ArgumentError(CGNetError, ValueError):
    """An argument is malformed: wrong shape, index out of range, empty list."""


class CapabilityError(CGNetError):
    """Requested angular momentum exceeds the precomputed table limit."""


class SelectionRuleError(CGNetError, ValueError):
    """Requested coupling violates the triangle rule |l1 - l2| <= l <= l1 + l2."""


class DegeneracyError(CGNetError):
    """Two points coincide (distance at or below the minimum radius)."""


class TrainingError(CGNetError):
    """Optimisation produced a non-finite loss."""
