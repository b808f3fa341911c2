"""Exception hierarchy shared across the package."""


class ProgressRLError(Exception):
    """Base class for all package errors."""


class InvalidInputError(ProgressRLError, ValueError):
    pass


class PlanningError(ProgressRLError):
    """A task instruction cannot be resolved against a scene graph."""


class GenerationError(ProgressRLError):
    pass


class TaskAssignmentError(ProgressRLError):
    """The house cannot host the requested task kind."""


class InfeasibleTaskError(ProgressRLError):
    pass


class ContractViolationError(ProgressRLError, RuntimeError):
    pass


class TransportError(ProgressRLError):
    """Network failure talking to an external service (retryable)."""

    def __init__(self, message, attempts=0):
        super().__init__(message)
        self.attempts = attempts


class ProtocolError(ProgressRLError):
    """An external service answered with something unusable."""

    def __init__(self, message, raw=None):
        super().__init__(message)
        self.raw = raw


class NonFiniteLossError(ProgressRLError, FloatingPointError):
    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}


class ConfigError(ProgressRLError, ValueError):
    pass
