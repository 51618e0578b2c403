"""Exception hierarchy. Validation problems subclass ``ValueError`` so callers
can catch them without importing this module."""


class SentinelError(Exception):
    pass


class ValidationError(SentinelError, ValueError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyFrameError(ValidationError):
    pass


class DegenerateError(ValidationError):
    """A column or sample has zero spread where the operation needs some."""

    def __init__(self, message, column=None):
        self.column = column
        super().__init__(message)


class InsufficientRowsError(ValidationError):
    pass


class ConvergenceError(SentinelError, RuntimeError):
    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class TrainingError(SentinelError, RuntimeError):
    def __init__(self, message, epoch=None):
        self.epoch = epoch
        super().__init__(message)
