import pytest

from btnsim.error_handlers import SimulationError, ValidationError
from btnsim.verify import (
    CHECK_NAMES, CHECKS, Check, CheckResult, check_contraction, check_convexity, check_energy_dissipation,
    check_exponential_stability, check_l2_balance, check_manufactured_convergence, check_pressure_deviation,
    check_semi_trivial_fixed_point, check_small_kappa_exploration, check_uniform_boundedness,
    check_weak_form_identity, run_check, run_checks, suite_passed,
)


def test_check_names_in_suite_order():
    assert CHECK_NAMES[0] == 'weak_form_identity'
    assert CHECK_NAMES[-1] == 'pressure_deviation'
    assert len(set(CHECK_NAMES)) == len(CHECK_NAMES) == 11


def test_every_check_is_required():
    assert all(check.required for check in CHECKS)


def test_run_check_records_simulation_error_as_failure():
    def broken(quick):
        raise SimulationError('residual grew', [])

    result = run_check(Check('broken', broken))
    assert not result.passed
    assert result.required
    assert 'SIMULATION_FAILED' in result.detail


def test_run_check_lets_programming_errors_through():
    def buggy(quick):
        raise KeyError('oops')

    with pytest.raises(KeyError):
        run_check(Check('buggy', buggy))


def test_suite_passed_ignores_optional_failures():
    results = [
        CheckResult('a', True, True, 0.1),
        CheckResult('b', False, False, 0.1),
    ]
    assert suite_passed(results)
    results.append(CheckResult('c', False, True, 0.1))
    assert not suite_passed(results)


def test_run_checks_rejects_unknown_names():
    with pytest.raises(ValidationError):
        run_checks(['weak_form_identity', 'nonsense'], quick=True)


def test_run_checks_keeps_suite_order():
    results = run_checks(['convexity', 'weak_form_identity'], quick=True)
    assert [r.name for r in results] == ['weak_form_identity', 'convexity']


@pytest.mark.parametrize('check', [
    check_weak_form_identity,
    check_manufactured_convergence,
    check_energy_dissipation,
    check_uniform_boundedness,
    check_exponential_stability,
    check_contraction,
    check_semi_trivial_fixed_point,
    check_convexity,
    check_l2_balance,
    check_pressure_deviation,
])
def test_quick_check_passes(check):
    passed, detail = check(True)
    assert passed, detail


def test_convexity_reports_zero_violations():
    passed, detail = check_convexity(True)
    assert detail.count('violations 0') == 3


def test_small_kappa_exploration_names_the_linear_stability_margin():
    passed, detail = check_small_kappa_exploration(True)
    assert '|m_inf| at kappa=0.05' in detail
    assert 'crossover' in detail
    assert 'max|grad p*|^2' in detail
    # a zero state that is linearly stable cannot produce the pattern
    if 'm = 0 linearly stable' in detail:
        assert not passed
