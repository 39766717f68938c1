class MemcilError(Exception):
    """Base class for all errors raised by memcil."""


class ShapeError(MemcilError, ValueError):
    pass


class NumericalError(MemcilError, FloatingPointError):
    pass


class ConfigError(MemcilError, ValueError):
    pass


class StateError(MemcilError, RuntimeError):
    pass


class IntegrityError(MemcilError, ValueError):
    """A code or blob does not belong to the codec it is being used with."""


class BudgetOverflowError(MemcilError):
    pass


class LabelError(MemcilError, ValueError):
    pass


class EmptyBatchError(MemcilError, ValueError):
    pass


class ProtocolError(MemcilError, ValueError):
    """Evaluation protocol violated (empty test set, too few sessions, ...)."""


class ParseError(MemcilError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EmptyClassError(MemcilError, ValueError):
    pass
