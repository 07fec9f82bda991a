"""Exception hierarchy for the lab."""


class LabError(Exception):
    """Base class for every error raised by dyadiclab."""


class InputError(LabError, ValueError):
    """Malformed argument: wrong dimension, off-boundary point, bad exponent."""


class ProjectionError(InputError):
    """The boundary projection is undefined (the point is the domain center)."""


class ResolutionError(LabError):
    """The boundary mesh is too coarse for the requested grid depth."""


class GenerationRangeError(LabError, IndexError):
    """A generation index beyond the depth of a built grid."""


class IntegrationError(LabError, ArithmeticError):
    """A Monte-Carlo integrand produced a non-finite value."""


class SelfMapError(LabError):
    """A symbol map sends a sampled point outside the domain."""


class CalibrationError(LabError):
    """Kube parameter calibration found no admissible constant."""


class ConfigError(LabError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field
