import math

import pytest

from btnsim.analysis import (
    EnergyRecord, dissipation_check, energy, l2_balance_check, lemma_ratio_ledger, pressure_deviation_bound,
    semitrivial_distance,
)
from btnsim.dynamics import run, semi_trivial_pressure
from btnsim.error_handlers import DissipationError, ValidationError
from btnsim.grid import Grid, NormSample, ScalarField, VectorField2, dirichlet_form
from btnsim.pressure import solve_pressure
from btnsim.scenario import SourceSpec


def _norms(**values):
    base = dict(
        grad_p_l2sq=1.0, mgradp_l2sq=0.0, grad_m_l2sq=0.0, m_l2gamma=0.0, lap_m_l2sq=1.0,
        lap_p_l2sq=1.0, m_linf=0.0, m_l2sq=0.0, grad_lap_p_l2sq=1.0, work_pS=1.0,
    )
    base.update(values)
    return NormSample(**base)


def _record(t, E, mt=0.0, **norms):
    return EnergyRecord(
        t=t, step_index=int(round(t * 1000)), E=E, dE_dt_est=0.0, mt_l2sq=mt,
        norms=_norms(**norms), dp_semitrivial=0.0, m_linf=0.0,
    )


def test_energy_of_semi_trivial_state(grid17):
    S = SourceSpec.default_dipole().field(grid17)
    zero = VectorField2.zeros(grid17)
    p = solve_pressure(zero, S, 1e-12)
    E = energy(zero, p, kappa=2.0, gamma=1.0)
    assert E == pytest.approx(0.5 * dirichlet_form(p))


def test_energy_non_negative(grid17, random_m):
    m = random_m(grid17, seed=9)
    p = solve_pressure(m, SourceSpec.default_dipole().field(grid17), 1e-10)
    assert energy(m, p, 0.1, 2.0) >= 0.0


def test_energy_rejects_bad_parameters(grid9):
    zero = VectorField2.zeros(grid9)
    with pytest.raises(ValidationError):
        energy(zero, ScalarField.zeros(grid9), kappa=0.0, gamma=1.0)


def test_energy_transposition_invariance(sines):
    grid = Grid(17, 17)
    s = ScalarField.from_function(grid, lambda X, Y: sines(X, Y) * X, boundary_zero=True)
    m = VectorField2(s, s.with_values(0.5 * s.values))
    # transposition swaps the vector components as well
    mt = VectorField2(s.with_values(0.5 * s.values.T), s.with_values(s.values.T))
    p = ScalarField.from_function(grid, sines, boundary_zero=True)
    pt = p.with_values(p.values.T)
    assert energy(m, p, 1.0, 1.5) == pytest.approx(energy(mt, pt, 1.0, 1.5), rel=1e-12)


def test_dissipation_exact_series():
    # E(t) = exp(-t) with matching -dE/dt per interval
    dt = 0.1
    records = [_record(0.0, 1.0)]
    for k in range(1, 6):
        t = k * dt
        rate = (math.exp(-(t - dt)) - math.exp(-t)) / dt
        records.append(_record(t, math.exp(-t), mt=rate))
    report = dissipation_check(records)
    assert report.n_intervals == 5
    assert report.max_abs_violation < 1e-12
    assert report.correlation == pytest.approx(1.0)
    assert report.within(0.0)


def test_dissipation_flags_energy_increase():
    records = [_record(0.0, 1.0), _record(0.1, 1.1), _record(0.2, 1.0, mt=1.0)]
    report = dissipation_check(records)
    assert report.max_energy_increase == pytest.approx(0.1)
    assert not report.within(1e-3)


def test_dissipation_rejects_non_uniform_spacing():
    records = [_record(0.0, 1.0), _record(0.1, 0.9), _record(0.3, 0.8)]
    with pytest.raises(DissipationError):
        dissipation_check(records)


def test_dissipation_needs_two_records():
    with pytest.raises(DissipationError):
        dissipation_check([_record(0.0, 1.0)])


def test_ledger_running_maxima():
    records = [
        _record(0.0, 1.0, lap_p_l2sq=4.0, lap_m_l2sq=0.0),
        _record(0.1, 1.0, lap_p_l2sq=1.0, lap_m_l2sq=0.0),
    ]
    ledger = lemma_ratio_ledger(records, kappa=1.0)
    assert ledger.rows[0].lap_p_ratio == pytest.approx(2.0)
    assert ledger.rows[1].lap_p_ratio == pytest.approx(1.0)
    assert ledger.rows[1].max_lap_p_ratio == pytest.approx(2.0)
    assert ledger.final_maxima()['lap_p_ratio'] == pytest.approx(2.0)
    assert ledger.stabilized()


def test_ledger_detects_growth():
    records = [_record(0.1 * k, 1.0, lap_p_l2sq=float(k + 1) ** 2) for k in range(6)]
    assert not lemma_ratio_ledger(records, kappa=4.0).stabilized()


def test_l2_balance_on_simulation(small_cfg):
    cfg = small_cfg.with_updates(dt=1e-4, t_end=0.01, record_every=1)
    result = run(cfg)
    report = l2_balance_check(result.trajectory, cfg.kappa)
    assert report.relative_residual <= 0.1


def test_pressure_deviation_bound_holds(grid17, random_m):
    source = SourceSpec.default_dipole()
    S = source.field(grid17)
    p_star = semi_trivial_pressure(source, grid17, 1e-10)
    for amplitude in (0.2, 1.0, 3.0):
        m = random_m(grid17, amplitude=amplitude)
        report = pressure_deviation_bound(m, solve_pressure(m, S, 1e-10), p_star)
        assert report.holds
        assert report.deviation > 0.0


def test_semitrivial_distance_zero_for_identical(grid9, sines):
    p = ScalarField.from_function(grid9, sines, boundary_zero=True)
    assert semitrivial_distance(p, p) == 0.0
