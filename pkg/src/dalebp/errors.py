"""Exception types raised across the package."""


class DalebpError(Exception):
    """Base class for all package errors."""

    #: exit code used by the CLI when this error escapes a command
    exit_code = 1


class ContractError(DalebpError, ValueError):
    """An operation was called with arguments that break its contract."""

    exit_code = 2


class ConfigurationError(DalebpError, ValueError):
    """A circuit or experiment configuration is outside its admissible window."""

    exit_code = 3


class NumericFault(DalebpError, FloatingPointError):
    """A simulation produced non-finite values."""

    exit_code = 4

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class ParseError(DalebpError):
    """A data file could not be decoded."""

    exit_code = 5

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} at byte offset {offset}")
        self.offset = offset


class TraceMismatch(DalebpError):
    """A simulated waveform diverged from its golden reference."""

    exit_code = 6

    def __init__(self, circuit, step, cell, column):
        super().__init__(
            f"{circuit}: first divergence at step {step}, cell {cell} (column {column!r})"
        )
        self.circuit = circuit
        self.step = step
        self.cell = cell
        self.column = column
