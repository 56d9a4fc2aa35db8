"""
Acceptance suite for btn-sim
Property checks run by `btn-sim verify`, each timed and reported as one row
"""

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from btnsim.analysis import (
    dissipation_check, l2_balance_check, lemma_ratio_ledger, pressure_deviation_bound, semitrivial_distance,
)
from btnsim.dynamics import (
    check_convexity_inequality, energy_tolerance, initial_state, run, semi_trivial_pressure, step,
)
from btnsim.error_handlers import BTNError, ValidationError
from btnsim.grid import Grid, ScalarField, VectorField2, gradient, laplacian_dirichlet
from btnsim.pressure import pressure_identity_residual, solve_pressure, solve_semi_trivial
from btnsim.scenario import InitialSpec, SimulationConfig
from btnsim.steady import (
    NONTRIVIAL_TOL, contraction_test, fit_decay_rate, kappa_sweep, semi_trivial_stability, solve_steady,
)


logger = logging.getLogger(__name__)


SWEEP_KAPPAS = (0.01, 0.02, 0.05, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0)
QUICK_SWEEP_KAPPAS = (0.05, 0.5, 5.0)
ORDER_WINDOW = (1.8, 2.2)


@dataclass
class CheckResult:
    name: str
    passed: bool
    required: bool
    elapsed: float
    detail: str = ''


@dataclass(frozen=True)
class Check:
    name: str
    fn: Callable[[bool], Tuple[bool, str]]
    required: bool = True


def _scenario(quick: bool, **changes) -> SimulationConfig:
    n = 17 if quick else 33
    base = SimulationConfig(grid=Grid(n, n), kappa=5.0, gamma=1.0, dt=1e-3)
    return base.with_updates(**changes)


def _sines(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return np.sin(np.pi * X) * np.sin(np.pi * Y)


def _order(errors: Sequence[float]) -> float:
    """Observed order from the two finest of a sequence of halved spacings."""
    return math.log2(errors[-2] / errors[-1])


def _in_window(order: float) -> bool:
    return ORDER_WINDOW[0] <= order <= ORDER_WINDOW[1]


# ===== DISCRETIZATION =====

def check_weak_form_identity(quick: bool) -> Tuple[bool, str]:
    """Tested pressure equation holds for random smooth conductances."""
    cfg = _scenario(quick)
    grid = cfg.grid
    S = cfg.source.field(grid)
    worst = 0.0
    for seed in range(5 if quick else 20):
        m = InitialSpec(kind='random', amplitude=1.0, seed=seed).build(grid)
        p = solve_pressure(m, S, 1e-10)
        worst = max(worst, pressure_identity_residual(m, p, S))
    return worst <= 1e-8, f"max identity residual {worst:.3e}"


def _anisotropic_source(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    # -div((I + m m^T) grad s) for s = sin(pi x) sin(pi y), m = (s/2, 0)
    sx, sy = np.sin(np.pi * X), np.sin(np.pi * Y)
    cx = np.cos(np.pi * X)
    return 2.0 * np.pi ** 2 * sx * sy - 0.25 * np.pi ** 2 * sy ** 3 * (2.0 * sx * cx ** 2 - sx ** 3)


def check_manufactured_convergence(quick: bool) -> Tuple[bool, str]:
    """Second-order convergence of gradient, Laplacian and pressure solves on 17/33/65 grids."""
    sizes = (17, 33, 65)
    errors: Dict[str, List[float]] = {'gradient': [], 'laplacian': [], 'poisson': [], 'anisotropic': []}

    for n in sizes:
        grid = Grid(n, n)
        X, Y = grid.coordinates
        s = ScalarField.from_function(grid, _sines, boundary_zero=True)
        inner = (slice(1, -1), slice(1, -1))

        g = gradient(s).m1.values
        errors['gradient'].append(float(np.max(np.abs(g - np.pi * np.cos(np.pi * X) * np.sin(np.pi * Y)))))

        lap = laplacian_dirichlet(s).values
        errors['laplacian'].append(float(np.max(np.abs(lap + 2.0 * np.pi ** 2 * s.values)[inner])))

        S = ScalarField.from_function(grid, lambda x, y: 2.0 * np.pi ** 2 * _sines(x, y))
        p = solve_semi_trivial(S, 1e-12)
        errors['poisson'].append(float(np.max(np.abs(p.values - s.values))))

        m = VectorField2(s.with_values(0.5 * s.values), ScalarField.zeros(grid))
        S_aniso = ScalarField.from_function(grid, _anisotropic_source)
        p = solve_pressure(m, S_aniso, 1e-12)
        errors['anisotropic'].append(float(np.max(np.abs(p.values - s.values))))

    orders = {name: _order(errs) for name, errs in errors.items()}
    passed = (
        _in_window(orders['laplacian'])
        and _in_window(orders['poisson'])
        and orders['gradient'] >= ORDER_WINDOW[0]
        and orders['anisotropic'] >= ORDER_WINDOW[0]
    )
    detail = ', '.join(f"{name} order {order:.3f}" for name, order in orders.items())
    return passed, detail


# ===== ENERGY =====

def check_energy_dissipation(quick: bool) -> Tuple[bool, str]:
    """Energy decreases at every record and tracks -||m_t||^2; the defect is first order in dt."""
    steps = 200 if quick else 2000
    cfg = _scenario(quick, t_end=steps * 1e-3, record_every=10)
    coarse = run(cfg)
    fine = run(cfg.with_updates(dt=cfg.dt / 2, record_every=2 * cfg.record_every))

    report = dissipation_check(coarse.trajectory)
    peak_rate = max(r.mt_l2sq for r in coarse.trajectory)
    tolerance = energy_tolerance(cfg, peak_rate) * cfg.record_every
    fine_report = dissipation_check(fine.trajectory)
    shrink = report.max_abs_violation / fine_report.max_abs_violation if fine_report.max_abs_violation > 0 else math.inf

    passed = (
        coarse.flagged_steps == 0
        and report.within(tolerance)
        and report.correlation >= 0.99
        and shrink >= 1.5
    )
    detail = (
        f"max increase {report.max_energy_increase:.3e} (tol {tolerance:.3e}), "
        f"correlation {report.correlation:.5f}, violation shrink {shrink:.2f} under dt/2, "
        f"flagged {coarse.flagged_steps}"
    )
    return passed, detail


def check_uniform_boundedness(quick: bool) -> Tuple[bool, str]:
    """Energy never exceeds its initial value and the regularity ratios level off."""
    cfg = _scenario(quick, t_end=0.3 if quick else 1.0, record_every=10)
    result = run(cfg)
    E0 = result.trajectory[0].E
    peak_rate = max(r.mt_l2sq for r in result.trajectory)
    E_max = max(r.E for r in result.trajectory)
    ledger = lemma_ratio_ledger(result.trajectory, cfg.kappa)
    maxima = ledger.final_maxima()

    passed = E_max <= E0 + cfg.n_steps * energy_tolerance(cfg, peak_rate) and ledger.stabilized()
    detail = (
        f"E0 {E0:.6e}, max E {E_max:.6e}, ratio maxima lap_p {maxima['lap_p_ratio']:.3e} "
        f"lap_m {maxima['lap_m_ratio']:.3e}, stabilized {ledger.stabilized()}"
    )
    return passed, detail


def check_l2_balance(quick: bool) -> Tuple[bool, str]:
    """Testing the conductance equation with m balances up to the time-discretization error."""
    cfg = _scenario(quick, dt=1e-4, t_end=0.02 if quick else 0.05, record_every=1)
    result = run(cfg)
    report = l2_balance_check(result.trajectory, cfg.kappa)
    return report.relative_residual <= 0.05, f"relative residual {report.relative_residual:.3e}"


# ===== LONG-TIME BEHAVIOUR =====

def check_exponential_stability(quick: bool) -> Tuple[bool, str]:
    """Exponential decay to the semi-trivial state at large kappa, faster for larger kappa."""
    parts = []
    passed = True
    rates = {}
    for gamma in (1.0, 2.0):
        for kappa in ((5.0, 10.0) if gamma == 1.0 else (5.0,)):
            cfg = _scenario(quick, kappa=kappa, gamma=gamma, t_end=0.3, record_every=1)
            result = run(cfg)
            fit = fit_decay_rate(result.trajectory, 'm_linf', floor=cfg.cg_tol)
            dp_end = result.trajectory[-1].dp_semitrivial
            rates[(gamma, kappa)] = fit.mu_hat
            ok = fit.r_squared >= 0.99 and dp_end < 1e-6
            passed = passed and ok
            parts.append(
                f"gamma={gamma:g} kappa={kappa:g}: mu {fit.mu_hat:.3f} r2 {fit.r_squared:.5f} dp_end {dp_end:.2e}"
            )

    ratio = rates[(1.0, 10.0)] / rates[(1.0, 5.0)]
    passed = passed and ratio >= 1.5
    parts.append(f"rate ratio kappa 10/5 {ratio:.3f}")
    return passed, '; '.join(parts)


def check_contraction(quick: bool) -> Tuple[bool, str]:
    """Two solutions from different data approach each other monotonically."""
    cfg = _scenario(quick, t_end=0.2 if quick else 0.3, record_every=5)
    m_a = InitialSpec(kind='sines', amplitude=1.0).build(cfg.grid)
    m_b = InitialSpec(kind='random', amplitude=0.5, seed=1).build(cfg.grid)
    trace = contraction_test(cfg, m_a, m_b)

    diffusion_time = 1.0 / (2.0 * np.pi ** 2 * cfg.kappa)
    monotone = trace.nonincreasing_after(diffusion_time, atol=1e-12)
    passed = monotone and trace.final < 1e-6
    return passed, f"|dm| {trace.dm_l2[0]:.3e} -> {trace.final:.3e}, monotone after t={diffusion_time:.4f}: {monotone}"


def check_semi_trivial_fixed_point(quick: bool) -> Tuple[bool, str]:
    """Zero conductance stays zero and the pressure stays at the Poisson solution."""
    cfg = _scenario(quick, kappa=1.0, initial=InitialSpec(kind='zero'))
    p_star = semi_trivial_pressure(cfg.source, cfg.grid, cfg.cg_tol)
    scale = max(1.0, semitrivial_distance(p_star, ScalarField.zeros(cfg.grid)))

    state = initial_state(cfg)
    worst_m, worst_p = 0.0, semitrivial_distance(state.p, p_star)
    for _ in range(100 if quick else 500):
        state = step(state, cfg)
        worst_m = max(worst_m, state.m.max_norm())
        worst_p = max(worst_p, semitrivial_distance(state.p, p_star))

    passed = worst_m <= 1e-12 and worst_p <= 1e-8 * scale
    return passed, f"max |m| {worst_m:.3e}, max |grad(p - p*)| {worst_p:.3e}"


def check_small_kappa_exploration(quick: bool) -> Tuple[bool, str]:
    """Non-trivial steady pattern at small kappa and the crossover to the semi-trivial branch."""
    base = _scenario(quick, kappa=0.05, t_end=0.3, record_every=1, steady_max_steps=2000 if quick else 5000)
    steady = solve_steady(base)
    pattern = steady.m_inf_linf > NONTRIVIAL_TOL
    stability = semi_trivial_stability(base)

    kappas = QUICK_SWEEP_KAPPAS if quick else SWEEP_KAPPAS
    coarse = kappa_sweep(base, kappas, use_cache=False).crossover_kappa
    parts = [
        f"|m_inf| at kappa=0.05: {steady.m_inf_linf:.3e}",
        f"crossover {coarse}",
        stability.describe(),
    ]
    passed = pattern and coarse is not None

    if not quick and coarse is not None:
        refined = kappa_sweep(base.with_updates(grid=Grid(65, 65)), kappas, use_cache=False).crossover_kappa
        stable = refined is not None and max(coarse, refined) / min(coarse, refined) <= 1.5
        passed = passed and stable
        parts.append(f"crossover on 65x65 {refined}")

    return passed, ', '.join(parts)


def check_convexity(quick: bool) -> Tuple[bool, str]:
    """Monotonicity inequality of the metabolic term on random pairs."""
    n_pairs = 10_000 if quick else 100_000
    reports = [check_convexity_inequality(gamma, n_pairs=n_pairs) for gamma in (1.0, 1.5, 2.0)]
    passed = all(r.violations == 0 for r in reports)
    detail = ', '.join(f"gamma={r.gamma:g}: c={r.constant:.4f} violations {r.violations}" for r in reports)
    return passed, detail


def check_pressure_deviation(quick: bool) -> Tuple[bool, str]:
    """||grad(p - p*)|| <= ||m||_inf^2 ||grad p|| for random conductances of several sizes."""
    cfg = _scenario(quick)
    grid = cfg.grid
    S = cfg.source.field(grid)
    p_star = semi_trivial_pressure(cfg.source, grid, cfg.cg_tol)
    worst = 0.0
    passed = True
    for seed, amplitude in enumerate((0.1, 0.5, 1.0, 2.0)):
        m = InitialSpec(kind='random', amplitude=amplitude, seed=seed).build(grid)
        p = solve_pressure(m, S, cfg.cg_tol)
        report = pressure_deviation_bound(m, p, p_star)
        passed = passed and report.holds
        if report.bound > 0.0:
            worst = max(worst, report.deviation / report.bound)
    return passed, f"max deviation/bound {worst:.4f}"


CHECKS: Tuple[Check, ...] = (
    Check('weak_form_identity', check_weak_form_identity),
    Check('manufactured_convergence', check_manufactured_convergence),
    Check('energy_dissipation', check_energy_dissipation),
    Check('uniform_boundedness', check_uniform_boundedness),
    Check('exponential_stability', check_exponential_stability),
    Check('contraction', check_contraction),
    Check('semi_trivial_fixed_point', check_semi_trivial_fixed_point),
    Check('small_kappa_exploration', check_small_kappa_exploration),
    Check('convexity', check_convexity),
    Check('l2_balance', check_l2_balance),
    Check('pressure_deviation', check_pressure_deviation),
)

CHECK_NAMES = tuple(check.name for check in CHECKS)


def run_check(check: Check, quick: bool = False) -> CheckResult:
    """Run one check; numerical failures inside it count as a failed check."""
    logger.info(f"Check {check.name} started")
    start = time.perf_counter()
    try:
        passed, detail = check.fn(quick)
    except BTNError as e:
        passed, detail = False, f"{e.code}: {e}"
    elapsed = time.perf_counter() - start

    status = 'passed' if passed else 'FAILED'
    if passed or not check.required:
        logger.info(f"Check {check.name} {status} in {elapsed:.1f}s: {detail}")
    else:
        logger.warning(f"Check {check.name} {status} in {elapsed:.1f}s: {detail}")
    return CheckResult(check.name, bool(passed), check.required, round(elapsed, 3), detail)


def run_checks(names: Optional[Sequence[str]] = None, quick: bool = False) -> List[CheckResult]:
    """
    Run the acceptance checks in suite order.

    Args:
        names: Subset of CHECK_NAMES; all checks when omitted
        quick: Reduced grids and horizons

    Raises:
        ValidationError: unknown check name
    """
    if names:
        unknown = [name for name in names if name not in CHECK_NAMES]
        if unknown:
            raise ValidationError('checks', f"unknown checks {unknown}, expected names from {list(CHECK_NAMES)}")
    selected = [check for check in CHECKS if not names or check.name in names]
    return [run_check(check, quick) for check in selected]


def suite_passed(results: Sequence[CheckResult]) -> bool:
    return all(r.passed for r in results if r.required)
