"""Shared failure types."""


class ResolutionError(ValueError):
    """A grid or horizon is too coarse/short for the requested accuracy."""


class InstabilityError(ValueError):
    """The excitation kernel is critical or supercritical; no stable solution."""


class BudgetError(RuntimeError):
    """An event-count budget was exhausted; carries the partial result."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial
