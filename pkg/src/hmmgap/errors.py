"""Exception types shared across the package."""


class ModelError(ValueError):
    """A model violates its structural invariants (CLI exit code 1)."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class NumericalError(RuntimeError):
    """A computation failed numerically (CLI exit code 2)."""


class InferenceDivergedError(NumericalError):
    """The SGD driver's likelihood probe collapsed; optimization aborted."""
