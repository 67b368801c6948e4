"""Exception hierarchy shared by every stiffsense module."""


class StiffsenseError(Exception):
    """Base class for all library errors."""


class DomainError(StiffsenseError, ValueError):
    """An argument lies outside the operation's domain."""


class TrialFormatError(StiffsenseError, ValueError):
    """A trial file does not follow the trial CSV format."""

    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class DuplicateTrialError(StiffsenseError, ValueError):
    """Two trials share the same (participant, condition, distance, width, repetition) key."""


class EmptyTrialSetError(StiffsenseError, ValueError):
    """No trial files were found where some were expected."""


class DegenerateSignalError(StiffsenseError, ValueError):
    """The signal carries no usable variation (e.g. constant input)."""


class NumericalFailureError(StiffsenseError, ArithmeticError):
    """A numerical routine produced non-finite values or failed to converge."""


class NoComplexRootError(StiffsenseError, ValueError):
    """The prediction polynomial has no complex-conjugate pole pair."""


class UndefinedGOFError(StiffsenseError, ValueError):
    """Goodness of fit is undefined because the actual signal is constant."""


class FitFailureError(StiffsenseError, RuntimeError):
    """Every optimizer start failed to produce a finite cost."""


class UndefinedCorrelationError(StiffsenseError, ValueError):
    """Rank correlation is undefined (zero rank variance)."""


class DegenerateTestError(StiffsenseError, ValueError):
    """A statistical test is undefined for the given data (zero variance)."""


class InsufficientDataError(StiffsenseError, ValueError):
    """Too few observations remain for the requested analysis."""


class FoldInfeasibleError(StiffsenseError, ValueError):
    """A class has fewer members than the requested number of folds."""


class ConvergenceError(StiffsenseError, RuntimeError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message, **diagnostics):
        self.diagnostics = diagnostics
        if diagnostics:
            detail = ", ".join(f"{k}={v}" for k, v in sorted(diagnostics.items()))
            message = f"{message} ({detail})"
        super().__init__(message)


class ConfigError(StiffsenseError, ValueError):
    """A configuration field is missing or invalid."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"config field '{field}': {message}")
