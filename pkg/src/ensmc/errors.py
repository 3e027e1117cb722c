"""Exception types shared across the package.

Plain invalid input (bad parameters, malformed files, non-normalized
tables) raises ValueError; the classes here mark domain events callers
may want to catch and handle individually.
"""


class EnsmcError(Exception):
    """Base class for package-specific errors."""


class UndefinedConditionalError(EnsmcError):
    """A next-symbol distribution was requested at a zero-probability context."""


class DeadPrefixError(EnsmcError):
    """Every continuation of a prefix has zero mass under the ensemble."""


class DegenerateRunError(EnsmcError):
    """All particles of a run carry zero weight; no estimate exists."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class EnumerationBudgetError(EnsmcError):
    """Exact enumeration was requested beyond the configured budget."""


class ExpertUnavailableError(EnsmcError):
    """A remote expert could not produce a usable response."""
