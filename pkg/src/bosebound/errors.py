"""Exception hierarchy.

Two families matter to the CLI: configuration problems (bad input, scale
hierarchy broken) and numerical problems (solver failed, budget exceeded).
"""


class BoseBoundError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(BoseBoundError):
    """Invalid user input or configuration."""


class ScaleHierarchyError(ConfigError):
    """The requested density is not small enough for the length hierarchy."""

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class NumericalError(BoseBoundError):
    """A numerical procedure failed to deliver a trustworthy answer."""


class ResolutionError(NumericalError):
    """Grid too coarse or integration did not converge."""


class ModelError(NumericalError):
    """Input violates a modelling assumption (e.g. attractive potential)."""


class BracketError(NumericalError):
    """Root bracket could not be established."""


class BudgetError(NumericalError):
    """Requested computation exceeds the declared budget."""


class VerificationError(NumericalError):
    """A checked inequality or identity failed."""
