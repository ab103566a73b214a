"""Exception types shared across the package.

Plain ``ValueError`` is used for malformed inputs (bad shapes, non-finite
entries, out-of-range parameters).  The classes below mark failure modes a
caller may want to catch specifically.
"""


class NumericsError(Exception):
    """Base class for numerical failures."""


class RankDeficiencyError(NumericsError):
    """Unregularized least-squares system is rank deficient."""


class ConvergenceError(NumericsError):
    """An iterative solver hit its iteration cap without converging."""


class DivergenceError(NumericsError):
    """An optimizer produced non-finite iterates or gradients.

    Carries the step index at which the failure was detected.
    """

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class DegenerateColumnError(ValueError):
    """A data column has zero variance where variation is required."""


class ConfigError(ValueError):
    """A run configuration failed validation.

    ``path`` locates the offending field, e.g. ``methods[2].family``.
    """

    def __init__(self, path: str, message: str):
        super().__init__(f"config error at {path}: {message}")
        self.path = path
