"""Exception types raised across the package."""


class ScoreXformError(Exception):
    """Base class for all package errors."""


class SingularJacobian(ScoreXformError):
    pass


class DomainError(ScoreXformError, ValueError):
    pass


class DegenerateSlice(ScoreXformError):
    """A slice function has zero gradient where a projection direction is needed."""


class EmptyData(ScoreXformError, ValueError):
    pass


class ConfigError(ScoreXformError, ValueError):
    pass


class SingularSystem(ScoreXformError):
    """Cholesky factorization failed; a larger ridge penalty usually helps."""


class NumericalBlowup(ScoreXformError):
    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite state encountered at step {step}")


class ParseError(ScoreXformError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
