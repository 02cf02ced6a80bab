"""Error types shared across the package.

Every error carries a short machine-readable ``code`` (e.g. ``BAD_PRIOR``,
``NUMERICAL_FAILURE``) next to the human-readable message so that callers --
in particular the CLI -- can map failures to exit codes without parsing text.
"""


class CaldesignError(Exception):
    """Base class; ``code`` is a stable identifier for the failure mode."""

    def __init__(self, code: str, message: str = ""):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)


class ValidationError(CaldesignError):
    """Malformed input data (instances, predictors, plans, parameters)."""


class SolverError(CaldesignError):
    """A solve that should have succeeded did not."""
