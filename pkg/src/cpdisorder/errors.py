"""Semantic exception hierarchy for the package."""

from __future__ import annotations


class DisorderError(Exception):
    """Base class for all package errors."""


class InvalidParamsError(DisorderError, ValueError):
    """Input parameters violate one or more model invariants.

    Carries the full list of violations so a caller sees every problem at
    once instead of fixing them one by one.
    """

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid parameters: " + "; ".join(self.violations))


class MarkSupportError(DisorderError, ValueError):
    """A mark value lies outside the support of the baseline jump law."""


class RegionUndefinedError(DisorderError, ValueError):
    """A closed-form region was queried outside the parameter regime where it is defined."""


class PathDataError(DisorderError, ValueError):
    """A path or trajectory record is internally inconsistent (corrupted input)."""


class SolverInvariantError(DisorderError, RuntimeError):
    """A solver iterate violated a structural invariant (signals a numerical bug)."""
