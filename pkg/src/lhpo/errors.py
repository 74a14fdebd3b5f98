"""Exception types shared across the library."""

from __future__ import annotations


class LhpoError(Exception):
    """Base class for library-specific failures."""


class InvariantViolation(LhpoError, ValueError):
    """A data structure violates one of its declared invariants."""


class FormatError(LhpoError, ValueError):
    """A file exists but its syntax or structure is not the expected schema."""


class DegenerateTaskError(LhpoError, ValueError):
    """A task has a constant response surface; normalized metrics are undefined."""


class IncompleteDesignError(LhpoError, ValueError):
    """A report was requested over an experiment grid with missing cells."""
