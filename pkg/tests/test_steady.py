import asyncio
import math
from types import SimpleNamespace

import numpy as np
import pytest

from btnsim import steady
from btnsim.analysis import EnergyRecord
from btnsim.database import close_database
from btnsim.dynamics import explicit_dt_bound
from btnsim.error_handlers import DecayFitError, ValidationError
from btnsim.grid import Grid, NormSample
from btnsim.scenario import GaussianTerm, InitialSpec, SimulationConfig, SourceSpec
from btnsim.steady import (
    SweepRow, bisect_kappa_threshold, contraction_test, find_crossover, fit_decay_rate, kappa_sweep, run_sweep,
    semi_trivial_stability, solve_steady,
)


def _records(times, values):
    norms = NormSample(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    return [
        EnergyRecord(t=float(t), step_index=k, E=0.0, dE_dt_est=0.0, mt_l2sq=0.0, norms=norms,
                     dp_semitrivial=float(q), m_linf=float(q))
        for k, (t, q) in enumerate(zip(times, values))
    ]


@pytest.fixture
def tiny_cfg():
    return SimulationConfig(grid=Grid(9, 9), kappa=5.0, dt=1e-3, t_end=0.1, record_every=1)


def test_fit_recovers_synthetic_rate():
    rng = np.random.default_rng(0)
    t = np.linspace(0.0, 3.0, 301)
    q = 5.0 * np.exp(-2.0 * t) + 1e-8 * rng.standard_normal(t.size)
    fit = fit_decay_rate(_records(t, q))
    assert fit.mu_hat == pytest.approx(2.0, rel=0.01)
    assert fit.r_squared > 0.999
    assert fit.window[0] == pytest.approx(0.6, abs=0.011)
    assert fit.intercept == pytest.approx(math.log(5.0), abs=0.01)


def test_fit_stops_at_noise_floor():
    t = np.linspace(0.0, 10.0, 1001)
    q = np.maximum(np.exp(-5.0 * t), 1e-12)
    fit = fit_decay_rate(_records(t, q), floor=1e-10)
    # usable span ends where q < 1e-8, near t = 3.7
    assert fit.window[1] < 3.7
    assert fit.mu_hat == pytest.approx(5.0, rel=1e-6)


def test_fit_truncates_before_non_positive_sample():
    t = np.linspace(0.0, 1.0, 101)
    q = np.exp(-t)
    q[50] = 0.0
    fit = fit_decay_rate(_records(t, q))
    assert fit.window[1] < 0.5


def test_fit_explicit_window():
    t = np.linspace(0.0, 1.0, 101)
    fit = fit_decay_rate(_records(t, np.exp(-3.0 * t)), window=(0.095, 0.305))
    assert fit.samples == 21
    assert fit.mu_hat == pytest.approx(3.0)


def test_fit_needs_ten_samples():
    t = np.linspace(0.0, 1.0, 8)
    with pytest.raises(DecayFitError):
        fit_decay_rate(_records(t, np.exp(-t)))


def test_fit_rejects_unknown_quantity():
    with pytest.raises(ValidationError):
        fit_decay_rate([], quantity='energy')


def test_fit_other_quantities():
    t = np.linspace(0.0, 1.0, 101)
    fit = fit_decay_rate(_records(t, np.exp(-4.0 * t)), quantity='dp_h1')
    assert fit.quantity == 'dp_h1'
    assert fit.mu_hat == pytest.approx(4.0)


def test_steady_from_zero_returns_immediately(tiny_cfg):
    result = solve_steady(tiny_cfg.with_updates(initial=InitialSpec(kind='zero')))
    assert result.iterations == 0
    assert result.converged
    assert result.m_inf_linf == 0.0


def test_steady_large_kappa_is_semi_trivial(tiny_cfg):
    result = solve_steady(tiny_cfg)
    assert result.converged
    assert result.residual <= tiny_cfg.steady_tol
    assert result.m_inf_linf < 1e-6


def test_steady_budget_exhaustion(tiny_cfg):
    result = solve_steady(tiny_cfg, tol=1e-14, max_steps=2)
    assert not result.converged
    assert result.iterations == 2
    assert result.polish_iterations == 0


def test_steady_rejects_bad_tolerance(tiny_cfg):
    with pytest.raises(ValidationError):
        solve_steady(tiny_cfg, tol=0.0)


def test_contraction_distance_shrinks(tiny_cfg):
    cfg = tiny_cfg.with_updates(t_end=0.05, record_every=5)
    m_a = InitialSpec(kind='sines').build(cfg.grid)
    m_b = InitialSpec(kind='random', amplitude=0.5, seed=1).build(cfg.grid)
    trace = contraction_test(cfg, m_a, m_b)
    assert len(trace.times) == 11
    assert trace.final < 0.1 * trace.dm_l2[0]
    assert trace.nonincreasing_after(0.01, atol=1e-12)


def test_contraction_identical_data_stays_zero(tiny_cfg):
    m = InitialSpec(kind='sines').build(tiny_cfg.grid)
    trace = contraction_test(tiny_cfg.with_updates(t_end=0.01), m, m)
    assert max(trace.dm_l2) == 0.0


def _row(kappa, linf):
    return SweepRow(kappa=kappa, m_inf_linf=linf, mu_hat=1.0, r_squared=1.0, converged=True, steps=1, residual=0.0)


def test_find_crossover():
    rows = [_row(0.1, 0.5), _row(1.0, 0.2), _row(2.0, 1e-9), _row(5.0, 1e-10)]
    assert find_crossover(rows) == 2.0


def test_find_crossover_without_transition():
    assert find_crossover([_row(1.0, 1e-9), _row(2.0, 1e-9)]) is None
    assert find_crossover([_row(1.0, 0.5), _row(2.0, 0.4)]) is None


def test_sweep_row_round_trip():
    row = _row(2.0, 0.1)
    assert SweepRow.from_dict(row.to_dict()) == row
    assert row.rate_per_kappa == pytest.approx(0.5)


def test_kappa_sweep_orders_rows(tiny_cfg):
    report = kappa_sweep(tiny_cfg, [10.0, 5.0], workers=1)
    assert [row.kappa for row in report.rows] == [5.0, 10.0]
    for row in report.rows:
        assert row.error is None
        assert row.m_inf_linf < 1e-6
        assert row.mu_hat > 0.0
    assert report.rows[1].mu_hat > report.rows[0].mu_hat


def test_kappa_sweep_rejects_bad_kappas(tiny_cfg):
    with pytest.raises(ValidationError):
        kappa_sweep(tiny_cfg, [1.0, -2.0])
    with pytest.raises(ValidationError):
        kappa_sweep(tiny_cfg, [])


def test_sweep_reuses_cached_rows(tiny_cfg, isolated_settings, monkeypatch):
    calls = []

    def fake_row(cfg):
        calls.append(cfg.kappa)
        return _row(cfg.kappa, 1e-9)

    monkeypatch.setattr(isolated_settings, 'ENABLE_RESULT_CACHE', True)
    monkeypatch.setattr(steady, 'sweep_row', fake_row)

    async def scenario():
        try:
            first = await run_sweep(tiny_cfg, [1.0, 2.0], workers=1, use_cache=True)
            second = await run_sweep(tiny_cfg, [1.0, 2.0], workers=1, use_cache=True)
        finally:
            await close_database()
        return first, second

    first, second = asyncio.run(scenario())
    assert calls == [1.0, 2.0]
    assert [r.to_dict() for r in first.rows] == [r.to_dict() for r in second.rows]


def test_bisect_reports_unbracketed(tiny_cfg):
    estimate = bisect_kappa_threshold(tiny_cfg, 4.0, 8.0)
    assert not estimate.bracketed
    assert len(estimate.evaluations) == 1


def test_bisect_validates_bracket(tiny_cfg):
    with pytest.raises(ValidationError):
        bisect_kappa_threshold(tiny_cfg, 2.0, 1.0)
    with pytest.raises(ValidationError):
        bisect_kappa_threshold(tiny_cfg, 1.0, 2.0, factor=1.0)


def test_fit_window_comes_from_full_horizon():
    # fast transient on top of the slow mode; the floor is reached near t = 3
    t = np.linspace(0.0, 10.0, 1001)
    q = np.exp(-t) * (1.0 + 1e4 * np.exp(-10.0 * t))
    fit = fit_decay_rate(_records(t, q), floor=5e-4)
    assert fit.window[0] == pytest.approx(2.0, abs=0.011)
    assert fit.window[1] < 3.0
    assert fit.mu_hat == pytest.approx(1.0, rel=1e-3)
    assert fit.r_squared > 0.9999


def test_steady_respects_explicit_bound_for_large_dt(tiny_cfg, monkeypatch):
    cfg = tiny_cfg.with_updates(gamma=2.0, dt=0.5, initial=InitialSpec(kind='sines', amplitude=3.0))
    violations = []
    original = steady.imex_update

    def checked_update(m, p, S, cfg_, h):
        if h > explicit_dt_bound(m, p, cfg_.gamma) * (1.0 + 1e-12):
            violations.append(h)
        return original(m, p, S, cfg_, h)

    monkeypatch.setattr(steady, 'imex_update', checked_update)
    result = solve_steady(cfg)
    assert violations == []
    assert result.converged
    assert np.isfinite(result.residual)
    assert result.m_inf_linf < 1e-6


def test_contraction_gamma_two(tiny_cfg):
    cfg = tiny_cfg.with_updates(gamma=2.0, t_end=0.05, record_every=5)
    m_a = InitialSpec(kind='sines').build(cfg.grid)
    m_b = InitialSpec(kind='random', amplitude=0.5, seed=1).build(cfg.grid)
    trace = contraction_test(cfg, m_a, m_b)
    assert trace.final < 0.1 * trace.dm_l2[0]
    assert trace.nonincreasing_after(1.0 / (2.0 * np.pi ** 2 * cfg.kappa), atol=1e-12)


def test_kappa_sweep_process_pool_matches_inline(tiny_cfg):
    inline = kappa_sweep(tiny_cfg, [5.0, 10.0], workers=1)
    pooled = kappa_sweep(tiny_cfg, [10.0, 5.0], workers=2)
    assert [row.kappa for row in pooled.rows] == [5.0, 10.0]
    for a, b in zip(inline.rows, pooled.rows):
        assert b.error is None
        assert b.m_inf_linf == pytest.approx(a.m_inf_linf, rel=1e-12, abs=1e-300)
        assert b.mu_hat == pytest.approx(a.mu_hat, rel=1e-12)
        assert b.steps == a.steps
    assert pooled.crossover_kappa == inline.crossover_kappa


def test_bisect_narrows_a_bracketed_threshold(tiny_cfg, monkeypatch):
    def fake_steady(cfg):
        return SimpleNamespace(m_inf_linf=0.5 if cfg.kappa < 1.3 else 1e-9)

    monkeypatch.setattr(steady, 'solve_steady', fake_steady)
    estimate = bisect_kappa_threshold(tiny_cfg, 0.5, 4.0, factor=1.1)
    assert estimate.bracketed
    assert estimate.kappa_lo < 1.3 <= estimate.kappa_hi
    assert estimate.kappa_hi / estimate.kappa_lo <= 1.1
    assert estimate.estimate == pytest.approx(1.3, rel=0.1)
    assert len(estimate.evaluations) > 2


def test_default_dipole_leaves_zero_state_linearly_stable():
    cfg = SimulationConfig(grid=Grid(33, 33), kappa=0.05)
    stability = semi_trivial_stability(cfg)
    assert stability.max_grad_sq < 1.0
    assert stability.threshold == pytest.approx(1.0 + 0.05 * 2.0 * np.pi ** 2)
    assert stability.stable
    assert 'linearly stable' in stability.describe()


def test_strong_source_breaks_the_stability_bound():
    strong = SourceSpec((GaussianTerm(0.25, 0.5, 200.0, 0.08), GaussianTerm(0.75, 0.5, -200.0, 0.08)))
    cfg = SimulationConfig(grid=Grid(33, 33), kappa=0.05, gamma=2.0, source=strong)
    stability = semi_trivial_stability(cfg)
    assert stability.threshold == pytest.approx(0.05 * 2.0 * np.pi ** 2)
    assert not stability.stable
    assert 'may be unstable' in stability.describe()
