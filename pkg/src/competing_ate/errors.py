"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class CompetingAteError(Exception):
    exit_code = 1


class ValidationError(CompetingAteError, ValueError):
    exit_code = 2


class ConvergenceError(CompetingAteError, RuntimeError):
    exit_code = 3

    def __init__(self, message, model=None):
        super().__init__(message if model is None else f"{model}: {message}")
        self.model = model


class PositivityError(CompetingAteError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, subject=None):
        super().__init__(message)
        self.subject = subject
