"""Exception hierarchy shared by every subsystem."""


class GDTError(Exception):
    """Base class for simulator errors."""


class ConfigError(GDTError, ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class ShapeError(GDTError, ValueError):
    pass


class NumericError(GDTError, ArithmeticError):
    pass


class DataError(GDTError, ValueError):
    pass


class DegenerateInputError(DataError):
    pass


class EmptyBufferError(GDTError, IndexError):
    pass


class DecisionError(GDTError, ValueError):
    pass


class SimulationError(GDTError):
    """Wraps a module error with the slot at which it happened."""

    def __init__(self, slot, cause):
        super().__init__(f"slot {slot}: {type(cause).__name__}: {cause}")
        self.slot = slot
        self.cause = cause
