"""Exception hierarchy shared by every module."""


class ExprgenError(Exception):
    """Base class for all package errors."""


class DimensionError(ExprgenError, ValueError):
    pass


class ConfigurationError(ExprgenError, ValueError):
    pass


class BatchSizeError(ExprgenError, ValueError):
    pass


class StateError(ExprgenError, RuntimeError):
    pass


class NumericError(ExprgenError, FloatingPointError):
    pass


class SizeBoundError(ExprgenError, ValueError):
    """Raised by exact diagnostics when the state space is too large to enumerate."""


class FormatError(ExprgenError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ParseError(ExprgenError, ValueError):
    def __init__(self, message, row=None, col=None):
        self.row = row
        self.col = col
        if row is not None:
            message = f"row {row}, col {col}: {message}"
        super().__init__(message)


class LabelingError(ExprgenError, KeyError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"no label for accession(s): {', '.join(self.missing)}")

    def __str__(self):
        return self.args[0]


class SplitError(ExprgenError, ValueError):
    pass


class InputRangeError(ExprgenError, ValueError):
    """Input values outside the domain an operation accepts (e.g. unscaled data fed to an RBM)."""


class DegenerateFitError(ExprgenError, ValueError):
    """Training labels contain a single class."""


class ExperimentError(ExprgenError):
    """A module error raised inside an experiment run, tagged with the task that hit it."""

    def __init__(self, task, cause):
        self.task, self.cause = task, cause
        super().__init__(f"{task}: {type(cause).__name__}: {cause}")
