"""Exception types shared across the package."""


class ReflectSimError(Exception):
    """Base class for all reflectsim errors."""


class GeometryError(ReflectSimError):
    """A geometric quantity was invalid or queried where it is not defined."""


class DomainQueryError(GeometryError):
    """A geometry query was made outside the domain's bounding box."""


class TubeExitError(GeometryError):
    """A point left the tubular neighborhood where the distance calculus is valid."""


class BracketError(ReflectSimError):
    """A root/crossing search was started without a valid bracket."""


class ModeError(ReflectSimError):
    """An operation requiring boundary contact was called off the boundary."""


class HorizonError(ReflectSimError):
    """A time outside the admissible horizon was requested."""


class StiffnessError(ReflectSimError):
    """The integrator step size underflowed, typically because k is too large."""


class InvalidRunError(ReflectSimError):
    """A penalty run left the tube; the stiffness k was too small.

    Carries the penetration depth reached when the run was aborted.
    """

    def __init__(self, message: str, penetration: float):
        super().__init__(message)
        self.penetration = penetration


class ConstructionError(ReflectSimError):
    """The non-uniqueness construction is impossible for the given inputs."""


class ConfigError(ReflectSimError):
    """A scenario configuration file is malformed or inconsistent."""
