"""
Unified error handling for btn-sim
Categorizes failures into validation, numerical and I/O errors with CLI exit codes
"""

from enum import Enum
from dataclasses import dataclass, replace
from typing import Any, List, Optional, Sequence


class ErrorCategory(Enum):
    """Error categories with their process exit codes."""
    VALIDATION = "validation"
    NUMERICAL = "numerical"
    IO = "io"


EXIT_CODES = {
    ErrorCategory.VALIDATION: 1,
    ErrorCategory.NUMERICAL: 2,
    ErrorCategory.IO: 3,
}

ERROR_PREFIX = 'BTN-ERR:'


@dataclass
class ErrorInfo:
    """Structured error representation."""
    code: str
    user_message: str
    technical_message: str
    category: ErrorCategory
    exception: Optional[Exception] = None

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.category]

    def to_dict(self) -> dict:
        """Convert to JSON-serializable dict for manifests and reports."""
        return {
            'code': self.code,
            'user_message': self.user_message,
            'technical_message': self.technical_message,
            'category': self.category.value,
            'exit_code': self.exit_code,
        }

    def to_line(self) -> str:
        """Single machine-parsable line for stderr."""
        message = ' '.join(self.user_message.split())
        return f"{ERROR_PREFIX} {self.code}: {message}"


# Error definitions
ERROR_DEFINITIONS = {
    # Validation errors (bad input, fix the config)
    'CONFIG_PARSE': ErrorInfo(
        code='CONFIG_PARSE',
        user_message='Malformed scenario file.',
        technical_message='Line is not of the form key = value',
        category=ErrorCategory.VALIDATION,
    ),
    'CONFIG_INVALID': ErrorInfo(
        code='CONFIG_INVALID',
        user_message='Scenario parameter out of range.',
        technical_message='Validation of a scenario field failed',
        category=ErrorCategory.VALIDATION,
    ),
    'FIELD_INVALID': ErrorInfo(
        code='FIELD_INVALID',
        user_message='Field violates its invariants.',
        technical_message='Non-finite values, wrong shape or non-zero boundary',
        category=ErrorCategory.VALIDATION,
    ),

    # Numerical failures
    'CG_NOT_CONVERGED': ErrorInfo(
        code='CG_NOT_CONVERGED',
        user_message='Conjugate gradients did not converge within the iteration cap.',
        technical_message='PCG residual above tolerance after the iteration cap',
        category=ErrorCategory.NUMERICAL,
    ),
    'TIME_STEP_TOO_LARGE': ErrorInfo(
        code='TIME_STEP_TOO_LARGE',
        user_message='Time step exceeds the explicit-term bound.',
        technical_message='dt > 0.5 / (1 + |grad p|_inf^2 + |m|_inf^(2(gamma-1)))',
        category=ErrorCategory.NUMERICAL,
    ),
    'STEP_FAILED': ErrorInfo(
        code='STEP_FAILED',
        user_message='Time step failed.',
        technical_message='Inner solve failed during an IMEX step',
        category=ErrorCategory.NUMERICAL,
    ),
    'SIMULATION_FAILED': ErrorInfo(
        code='SIMULATION_FAILED',
        user_message='Simulation aborted.',
        technical_message='Step failure propagated from the run driver',
        category=ErrorCategory.NUMERICAL,
    ),
    'DECAY_FIT_FAILED': ErrorInfo(
        code='DECAY_FIT_FAILED',
        user_message='Not enough usable samples for a decay fit.',
        technical_message='Fewer than 10 positive samples in the fit window',
        category=ErrorCategory.NUMERICAL,
    ),
    'DISSIPATION_CHECK_FAILED': ErrorInfo(
        code='DISSIPATION_CHECK_FAILED',
        user_message='Records are unsuitable for the dissipation check.',
        technical_message='Fewer than two records or non-uniform record spacing',
        category=ErrorCategory.NUMERICAL,
    ),
    'VERIFY_FAILED': ErrorInfo(
        code='VERIFY_FAILED',
        user_message='Acceptance suite reported failures.',
        technical_message='At least one required check failed',
        category=ErrorCategory.NUMERICAL,
    ),

    # I/O
    'FIELD_FORMAT': ErrorInfo(
        code='FIELD_FORMAT',
        user_message='Field snapshot file is malformed.',
        technical_message='Bad BTNFIELD header or payload size',
        category=ErrorCategory.IO,
    ),
    'OUTPUT_FAILED': ErrorInfo(
        code='OUTPUT_FAILED',
        user_message='Could not write output files.',
        technical_message='Filesystem error while writing results',
        category=ErrorCategory.IO,
    ),
    'IO_ERROR': ErrorInfo(
        code='IO_ERROR',
        user_message='File access failed.',
        technical_message='OSError',
        category=ErrorCategory.IO,
    ),

    # Fallback
    'UNKNOWN_ERROR': ErrorInfo(
        code='UNKNOWN_ERROR',
        user_message='Unknown error occurred. Check logs.',
        technical_message='Unclassified error',
        category=ErrorCategory.NUMERICAL,
    ),
}


class BTNError(Exception):
    """Base class for all btn-sim errors."""

    code = 'UNKNOWN_ERROR'

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ConfigParseError(BTNError):
    """Malformed scenario text."""

    code = 'CONFIG_PARSE'

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class ValidationError(BTNError, ValueError):
    """A named scenario field is out of range."""

    code = 'CONFIG_INVALID'

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


class FieldError(BTNError, ValueError):
    """Field invariant violation (shape, finiteness, boundary-zero)."""

    code = 'FIELD_INVALID'


class FieldFormatError(BTNError):
    """Malformed BTNFIELD snapshot."""

    code = 'FIELD_FORMAT'


class ConvergenceError(BTNError):
    """Iterative solver failure carrying the relative residual history."""

    code = 'CG_NOT_CONVERGED'

    def __init__(self, message: str, residual_history: Sequence[float]):
        super().__init__(message)
        self.residual_history: List[float] = list(residual_history)


class TimeStepError(BTNError):
    """dt violates the explicit-term bound and halving is disabled."""

    code = 'TIME_STEP_TOO_LARGE'

    def __init__(self, message: str, dt: float, bound: float):
        super().__init__(message)
        self.dt = dt
        self.bound = bound


class StepError(BTNError):
    """A single IMEX step failed."""

    code = 'STEP_FAILED'

    def __init__(self, message: str, step_index: int, cause: Optional[Exception] = None):
        super().__init__(message)
        self.step_index = step_index
        self.cause = cause


class SimulationError(BTNError):
    """Run aborted; carries the trajectory recorded so far."""

    code = 'SIMULATION_FAILED'

    def __init__(self, message: str, partial_trajectory: Sequence[Any], cause: Optional[Exception] = None):
        super().__init__(message)
        self.partial_trajectory = list(partial_trajectory)
        self.cause = cause


class DecayFitError(BTNError):
    """Too few samples for a log-linear fit."""

    code = 'DECAY_FIT_FAILED'


class DissipationError(BTNError):
    """Records unsuitable for dissipation accounting."""

    code = 'DISSIPATION_CHECK_FAILED'


class OutputError(BTNError):
    """Writing results failed."""

    code = 'OUTPUT_FAILED'


def get_error(code: str, override_message: Optional[str] = None) -> ErrorInfo:
    """
    Get error definition by code.

    Args:
        code: Error code key
        override_message: Optional override for user_message

    Returns:
        ErrorInfo instance
    """
    error = ERROR_DEFINITIONS.get(code, ERROR_DEFINITIONS['UNKNOWN_ERROR'])

    # Copy so callers can attach the exception without touching the table
    return replace(error, user_message=override_message or error.user_message)


def categorize_error(exception: Exception) -> ErrorInfo:
    """
    Categorize an exception into an ErrorInfo.

    Args:
        exception: Python exception

    Returns:
        ErrorInfo instance
    """
    if isinstance(exception, BTNError):
        cause = getattr(exception, 'cause', None)
        # Aborted runs report the underlying numerical cause when there is one
        if isinstance(exception, (SimulationError, StepError)) and isinstance(cause, BTNError):
            error = get_error(cause.code, str(exception))
        else:
            error = get_error(exception.code, str(exception))
    elif isinstance(exception, OSError):
        error = get_error('IO_ERROR', str(exception) or exception.__class__.__name__)
    elif isinstance(exception, (FloatingPointError, ArithmeticError)):
        error = get_error('STEP_FAILED', str(exception))
    else:
        error = get_error('UNKNOWN_ERROR', f"{exception.__class__.__name__}: {exception}")

    error.exception = exception
    return error
