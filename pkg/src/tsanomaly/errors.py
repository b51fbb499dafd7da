"""Exception hierarchy shared by all modules."""


class TsAnomalyError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(TsAnomalyError, ValueError):
    pass


class ParameterError(TsAnomalyError, ValueError):
    pass


class ContractError(TsAnomalyError, ValueError):
    pass


class StateError(TsAnomalyError, RuntimeError):
    pass


class NonFiniteError(TsAnomalyError, FloatingPointError):
    """An operation produced NaN or Inf."""


class EvaluationError(TsAnomalyError, FloatingPointError):
    pass


class DivergenceError(TsAnomalyError, FloatingPointError):
    """Training produced a non-finite loss or gradient.

    ``history`` holds whatever was recorded before the failure and
    ``parameter`` names the offending tensor when known.
    """

    def __init__(self, message, history=None, parameter=None):
        super().__init__(message)
        self.history = history
        self.parameter = parameter


class EmptyWindowError(TsAnomalyError, ValueError):
    pass


class EmptyBatchError(TsAnomalyError, ValueError):
    pass


class SchemaError(TsAnomalyError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class OrderingError(TsAnomalyError, ValueError):
    pass


class LabelError(TsAnomalyError, ValueError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class SplitError(TsAnomalyError, ValueError):
    pass


class WindowError(TsAnomalyError, ValueError):
    pass


class SpecError(TsAnomalyError, ValueError):
    pass


class ConfigError(TsAnomalyError, ValueError):
    pass


class StageError(TsAnomalyError):
    """A pipeline stage failed; wraps the original cause."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
