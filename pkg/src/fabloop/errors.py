"""Exception types raised across the package."""


class FabloopError(Exception):
    """Base class for every error raised by fabloop."""


# kinematics
class OutOfReach(FabloopError):
    pass


class Singular(FabloopError):
    pass


# vision geometry
class DegenerateQuad(FabloopError):
    pass


class PointAtInfinity(FabloopError):
    pass


class NonInvertible(FabloopError):
    pass


# thermal / extrusion
class OpenCircuit(FabloopError):
    pass


class ShortCircuit(UserWarning):
    """Emitted (not raised) when the divider reads full scale."""


class NonPhysical(FabloopError):
    pass


class SingularSystem(FabloopError):
    pass


class UnstableStep(FabloopError):
    pass


# simulation
class OutOfBed(FabloopError):
    pass


class ThermalTimeout(FabloopError):
    pass


# configuration
class ConfigError(FabloopError):
    """Configuration problem; ``path`` names the offending field when known."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    pass


class UnknownKey(ConfigError):
    pass
