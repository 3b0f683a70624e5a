"""Exception hierarchy shared across the package.

Each class carries the CLI exit code it maps to.
"""

from __future__ import annotations


class MaxBootError(Exception):
    exit_code = 1


class ValidationError(MaxBootError, ValueError):
    """Invalid input: bad parameters, malformed matrices, out-of-range levels."""

    exit_code = 2


class CapabilityError(MaxBootError):
    """No computational path exists for the requested combination."""

    exit_code = 3


class CostRefusal(MaxBootError):
    """Projected work exceeds the configured budget."""

    exit_code = 4

    def __init__(self, message: str, projected: float, budget: float):
        super().__init__(message)
        self.projected = projected
        self.budget = budget


class ReportIOError(MaxBootError, OSError):
    exit_code = 5
