"""Exception types shared across the toolkit."""


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested operation."""


class NumericError(ArithmeticError):
    """A forward value or gradient became NaN or infinite."""


class ContractError(ValueError):
    """A caller violated an operation precondition."""


class CheckpointError(RuntimeError):
    """Checkpoint file is malformed: bad magic, version, truncation, or CRC."""


class DataFormatError(RuntimeError):
    """Dataset file is malformed or internally inconsistent."""


class MaskViolationError(RuntimeError):
    """A pruned weight became nonzero during fine-tuning."""


class DivergenceError(RuntimeError):
    """Training loss became non-finite; carries the trace collected so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ConfigError(ValueError):
    """Experiment configuration failed validation; names the offending field."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class StageError(RuntimeError):
    """A pipeline stage ran out of order or its inputs are missing."""
