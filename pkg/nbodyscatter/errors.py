"""Exception hierarchy for nbodyscatter.

Library code raises these; the CLI layer maps them onto exit codes
(1 for configuration problems, 2 for numerical non-convergence).
"""


class NBodyScatterError(Exception):
    """Base class for every error raised by this package."""


# Configuration / domain errors (exit code 1)

class ConfigurationError(NBodyScatterError, ValueError):
    """Invalid system definition, state, parameter set or config file."""


class DomainError(NBodyScatterError, ValueError):
    """An argument lies outside the documented domain of an operation."""


class KeplerParameterError(DomainError):
    """Kepler hyperbola requested with non-positive energy."""


# Numerical errors

class CollisionError(NBodyScatterError):
    """Configuration lies on the collision set of a singular potential."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class BackwardCollisionError(CollisionError):
    """Backward integration inside a time-limit transform hit a collision."""


class IntegrationError(NBodyScatterError):
    """The adaptive step-size controller gave up."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class DegenerateVelocityError(NBodyScatterError):
    """Two bodies share (numerically) the same velocity."""


class InfiniteSeminormError(NBodyScatterError):
    """Sampled seminorm supremand keeps growing towards the sampling edge."""


class NonConvergenceError(NBodyScatterError):
    """A limit or iteration did not converge to the requested tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ContractionFailureError(NonConvergenceError):
    """Successive fixed-point differences stopped shrinking geometrically."""


class NotFreeError(NBodyScatterError):
    """Trajectory never entered the finally free region before the horizon."""


class UnequalMomentaError(NBodyScatterError):
    """Two orbits were expected to share an asymptotic momentum but do not."""


class StencilFailureError(NBodyScatterError):
    """A finite-difference stencil point could not be evaluated."""


class InsufficientEscapeError(NBodyScatterError):
    """Trajectory does not escape, so no asymptote can be fitted."""


class DegenerateConfigurationError(NBodyScatterError):
    """Central-configuration test undefined because the force vanishes."""
