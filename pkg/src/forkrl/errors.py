class ForkRLError(Exception):
    """Base class for every error raised by forkrl."""


class ConfigError(ForkRLError, ValueError):
    pass


class StepOnTerminalError(ForkRLError, RuntimeError):
    pass


class ShapeMismatchError(ForkRLError, ValueError):
    pass


class NonFiniteInputError(ForkRLError, ValueError):
    pass


class PlannerError(ForkRLError, RuntimeError):
    pass


class NoPathError(ForkRLError, RuntimeError):
    pass


class DemoYieldError(ForkRLError, RuntimeError):
    pass


class DemoSchemaError(ForkRLError, ValueError):
    pass


class CorruptLineError(ForkRLError, ValueError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"corrupt record at line {line_no}: {reason}")
        self.line_no = line_no


class EmptyDatasetError(ForkRLError, ValueError):
    pass


class MissingDemosError(ForkRLError, FileNotFoundError):
    pass


class MissingCheckpointError(ForkRLError, FileNotFoundError):
    pass


class NonFiniteLossError(ForkRLError, FloatingPointError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NoSuccessesError(ForkRLError, ValueError):
    pass


class EmptyLogError(ForkRLError, ValueError):
    pass


class CheckpointFormatError(ForkRLError, ValueError):
    pass
