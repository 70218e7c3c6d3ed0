"""Exception types shared by the subgraph information bottleneck toolkit."""

from typing import Optional


class SibError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(SibError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(SibError, ValueError):
    """An argument lies outside the domain of an operation."""


class ContractError(SibError):
    """A caller broke an operation's precondition."""


class NonFiniteError(SibError, ArithmeticError):
    """A NaN or Inf value was produced."""


class ConfigError(SibError):
    """Invalid configuration value or unknown configuration key."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class DatasetFormatError(SibError):
    """A dataset file is malformed."""

    def __init__(self, message: str, file: Optional[str] = None, line: Optional[int] = None):
        location = ""
        if file is not None:
            location = f"{file}:{line}: " if line is not None else f"{file}: "
        super().__init__(f"{location}{message}")
        self.file = file
        self.line = line


class DivergenceError(SibError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, component: str, detail: str = ""):
        message = f"Training diverged at outer step {step}: non-finite {component}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)
        self.step = step
        self.component = component
