"""Exception hierarchy shared across the package."""


class TwachainError(Exception):
    """Base class for all package errors."""


class ConfigError(TwachainError):
    """Invalid configuration; carries the list of violations."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class NonFiniteFieldError(TwachainError):
    """A phase-space field left the finite range during integration."""

    def __init__(self, trajectory, site, time):
        self.trajectory = int(trajectory)
        self.site = int(site)
        self.time = float(time)
        super().__init__(
            f"non-finite field in trajectory {trajectory} at site {site}, t={time:.6g}"
        )


class PerturbSiteOutOfRangeError(TwachainError):
    pass


class EmptyAccumulatorError(TwachainError):
    pass


class VanishingPopulationError(TwachainError):
    pass


class DegenerateGridError(TwachainError):
    pass


class GridMismatchError(TwachainError):
    pass


class FrontNotReachedError(TwachainError):
    def __init__(self, sites):
        self.sites = list(sites)
        super().__init__(f"OTOC front never reached threshold at sites {self.sites}")


class InsufficientBandPointsError(TwachainError):
    pass


class CutoffTooSmallError(TwachainError):
    pass


class NoSteadyStateError(TwachainError):
    pass


class DimensionCapError(TwachainError):
    pass


class CutoffLeakageError(TwachainError):
    pass


class NotSteadyWithinBudgetError(TwachainError):
    pass
