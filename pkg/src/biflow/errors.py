"""Exception types shared across the engine."""


class BiflowError(Exception):
    """Base class for all engine errors."""


class ConfigError(BiflowError):
    """Invalid configuration, parameters, or precondition violation."""


class OutOfDomain(BiflowError):
    """A required evaluation point lies outside the available coverage."""

    def __init__(self, message, where=None, time=None):
        super().__init__(message)
        self.where = where
        self.time = time


class SingularDensity(BiflowError):
    """A carried charge density fell below the working floor."""

    def __init__(self, message, where=None, time=None):
        super().__init__(message)
        self.where = where
        self.time = time


class CrossingDetected(BiflowError):
    """Trajectories of one family crossed (non-positive volume stretch)."""

    def __init__(self, message, index=None, time=None):
        super().__init__(message)
        self.index = index
        self.time = time


class BranchAmbiguity(BiflowError):
    """Sign branch of a square-root density cannot be tracked."""


class ConstraintViolation(BiflowError):
    """Lifted-field consistency constraint broken beyond tolerance."""
