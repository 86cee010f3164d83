"""
Exception types shared by the whole package.

The CLI maps them to exit codes:
- ValidationError / UnsupportedError -> 2 (usage problem)
- everything else derived from SudestError -> 1
"""


class SudestError(RuntimeError):
    """Root of all library errors."""


class ValidationError(SudestError, ValueError):
    """Input failed a shape, range or structure check. The message names the check."""


class UnsupportedError(SudestError):
    """Valid request outside what the library implements (e.g. non-prime MUBs)."""


class AttainabilityError(SudestError):
    """The Braunstein-Caves bound cannot be attained with the collective recipe."""


class EstimationError(SudestError):
    """Maximum-likelihood fitting failed for every trial of an experiment."""
