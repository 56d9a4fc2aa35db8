import pytest

from btnsim.error_handlers import (
    ERROR_DEFINITIONS, ConfigParseError, ConvergenceError, ErrorCategory, FieldFormatError, SimulationError,
    StepError, ValidationError, categorize_error, get_error,
)


def test_every_definition_has_matching_code():
    for code, info in ERROR_DEFINITIONS.items():
        assert info.code == code


@pytest.mark.parametrize('exc, code, exit_code', [
    (ConfigParseError('bad', 3), 'CONFIG_PARSE', 1),
    (ValidationError('kappa', 'must be positive'), 'CONFIG_INVALID', 1),
    (ConvergenceError('stalled', [1.0, 0.5]), 'CG_NOT_CONVERGED', 2),
    (FieldFormatError('bad header'), 'FIELD_FORMAT', 3),
    (FileNotFoundError(2, 'No such file'), 'IO_ERROR', 3),
    (ZeroDivisionError('boom'), 'STEP_FAILED', 2),
    (RuntimeError('??'), 'UNKNOWN_ERROR', 2),
])
def test_categorize(exc, code, exit_code):
    info = categorize_error(exc)
    assert info.code == code
    assert info.exit_code == exit_code
    assert info.exception is exc


def test_simulation_error_reports_cause():
    cause = ConvergenceError('stalled', [1.0])
    step_error = StepError('step 4 failed', 4, cause=cause)
    sim = SimulationError('run aborted', [], cause=cause)
    assert categorize_error(sim).code == 'CG_NOT_CONVERGED'
    assert categorize_error(step_error).code == 'CG_NOT_CONVERGED'
    assert categorize_error(SimulationError('run aborted', [])).code == 'SIMULATION_FAILED'


def test_error_line_is_single_line():
    line = categorize_error(ValidationError('gamma', 'gamma >= 1\nrequired')).to_line()
    assert line == 'BTN-ERR: CONFIG_INVALID: gamma: gamma >= 1 required'


def test_get_error_copies_definition():
    info = get_error('IO_ERROR', 'disk full')
    assert info.user_message == 'disk full'
    assert ERROR_DEFINITIONS['IO_ERROR'].user_message != 'disk full'
    assert get_error('NO_SUCH_CODE').code == 'UNKNOWN_ERROR'


def test_validation_error_is_value_error():
    assert isinstance(ValidationError('dt', 'negative'), ValueError)
    assert categorize_error(ValidationError('dt', 'negative')).category is ErrorCategory.VALIDATION
