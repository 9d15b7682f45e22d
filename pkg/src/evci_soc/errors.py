class EvciError(Exception):
    """Base class for every error raised by this package."""


class EmptyInputError(EvciError, ValueError):
    pass


class ShapeError(EvciError, ValueError):
    pass


class RangeError(EvciError, ValueError):
    pass


class ParseError(EvciError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DomainError(EvciError, ValueError):
    pass


class SolverError(EvciError, ArithmeticError):
    pass


class ConfigError(EvciError, ValueError):
    pass


class CapacityError(EvciError, ValueError):
    def __init__(self, message, achievable):
        self.achievable = achievable
        super().__init__(message)


class PlanError(EvciError, ValueError):
    pass


class CalibrationError(EvciError, ValueError):
    pass


class SimulationError(EvciError, RuntimeError):
    def __init__(self, message, timestep):
        self.timestep = timestep
        super().__init__(f"t={timestep}: {message}")
