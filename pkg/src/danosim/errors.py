"""Exception types shared across the package."""


class DanosimError(Exception):
    """Base class for all package errors."""


class DomainError(DanosimError):
    """An argument violates an operation's preconditions."""


class ParseError(DanosimError):
    """A file or configuration could not be parsed or validated."""


class DivergenceError(DanosimError):
    """Simulation produced a non-finite state."""

    def __init__(self, message, step_index=None, body=None):
        super().__init__(message)
        self.step_index = step_index
        self.body = body
