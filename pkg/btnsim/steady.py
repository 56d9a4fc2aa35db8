"""
Stationary states and long-time behaviour
Pseudo-time steady solves, decay-rate fits, contraction runs and kappa sweeps
"""

import asyncio
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import linregress

from btnsim import __version__
from btnsim.analysis import EnergyRecord, semitrivial_distance
from btnsim.cache import SweepCache
from btnsim.config import settings
from btnsim.dynamics import (
    MAX_HALVINGS, conductance_residual, diffusion_operator, explicit_dt_bound, imex_update, initial_state, run,
    semi_trivial_pressure, source_field, stationary_residual, step,
)
from btnsim.error_handlers import BTNError, DecayFitError, SimulationError, ValidationError
from btnsim.grid import ScalarField, VectorField2, gradient, integrate
from btnsim.pressure import solve_pressure
from btnsim.scenario import SimulationConfig, serialize_config
from btnsim.solvers import pcg


logger = logging.getLogger(__name__)


# ||m_inf||_inf below this counts as the semi-trivial state
TRIVIAL_TOL = 1e-6
# ... and above this as a non-trivial pattern candidate
NONTRIVIAL_TOL = 1e-3

MIN_FIT_SAMPLES = 10
POLISH_STEPS = (1.0, 0.5, 0.25)
DECAY_QUANTITIES = ('m_linf', 'dp_h1', 'm_l2')


# ===== STEADY STATE =====

@dataclass
class SteadyResult:
    m_inf: VectorField2
    p_inf: ScalarField
    residual: float
    iterations: int
    converged: bool
    pseudo_time: float = 0.0
    polish_iterations: int = 0

    @property
    def m_inf_linf(self) -> float:
        return self.m_inf.max_norm()

    def summary(self) -> dict:
        return {
            'residual': self.residual,
            'iterations': self.iterations,
            'converged': self.converged,
            'pseudo_time': self.pseudo_time,
            'polish_iterations': self.polish_iterations,
            'm_inf_linf': self.m_inf_linf,
        }


def _polish(m: VectorField2, p: ScalarField, cfg: SimulationConfig, S: ScalarField,
            residual: float, max_iterations: int = 3) -> Tuple[VectorField2, ScalarField, float, int]:
    """
    Damped fixed-point refinement with the SPD approximate Jacobian kappa(-lap_h) + I.

    A step is kept only if it lowers the stationary residual.
    """
    grid = m.grid
    J = diffusion_operator(grid, cfg.kappa)
    done = 0

    for _ in range(max_iterations):
        R = conductance_residual(m, p, cfg.kappa, cfg.gamma)
        directions = []
        for comp in (R.m1, R.m2):
            rhs = -np.ascontiguousarray(comp.interior).ravel()
            directions.append(grid.embed_interior(pcg(J, rhs, cfg.cg_tol).x))

        improved = False
        for omega in POLISH_STEPS:
            trial = VectorField2.from_arrays(
                grid,
                m.m1.values + omega * directions[0],
                m.m2.values + omega * directions[1],
            )
            p_trial = solve_pressure(trial, S, cfg.cg_tol, x0=p)
            r_trial = stationary_residual(trial, p_trial, cfg)
            if r_trial < residual:
                m, p, residual = trial, p_trial, r_trial
                improved = True
                break

        if not improved:
            break
        done += 1

    return m, p, residual, done


def solve_steady(cfg: SimulationConfig, init: Optional[VectorField2] = None,
                 tol: Optional[float] = None, max_steps: Optional[int] = None) -> SteadyResult:
    """
    Stationary solution by pseudo-time continuation.

    Runs IMEX updates with an adaptive pseudo-time step (x1.5 while the
    stationary residual falls, halved otherwise, capped by the explicit-term
    bound of the current iterate and floored at bound / 2^MAX_HALVINGS) until
    the residual is at most tol, then polishes. Budget exhaustion returns
    converged=False with the best iterate seen.

    Args:
        cfg: Scenario (kappa, gamma, source, grid, cg_tol)
        init: Initial conductance; cfg.initial when omitted
        tol: Residual tolerance; cfg.steady_tol when omitted
        max_steps: Pseudo-time step budget; cfg.steady_max_steps when omitted

    Returns:
        SteadyResult
    """
    tol = cfg.steady_tol if tol is None else tol
    if not tol > 0:
        raise ValidationError('steady_tol', f"tolerance must be positive, got {tol}")
    max_steps = cfg.steady_max_steps if max_steps is None else max_steps

    grid = cfg.grid
    S = source_field(cfg.source, grid)
    m = cfg.initial.build(grid) if init is None else init
    p = solve_pressure(m, S, cfg.cg_tol)
    residual = stationary_residual(m, p, cfg)

    if m.max_norm() == 0.0:
        # semi-trivial state is an exact stationary point
        logger.info(f"Steady: zero initial conductance, residual {residual:.3e}")
        return SteadyResult(m, p, residual, 0, residual <= tol)

    h = min(cfg.dt, explicit_dt_bound(m, p, cfg.gamma))
    best = (residual, m, p)
    pseudo_time = 0.0
    iterations = 0

    while residual > tol and iterations < max_steps:
        bound = explicit_dt_bound(m, p, cfg.gamma)
        h = min(max(h, bound * 2.0 ** -MAX_HALVINGS), bound)
        try:
            m_next, p_next = imex_update(m, p, S, cfg, h)
        except BTNError as e:
            logger.warning(f"Steady: pseudo-time update failed at iteration {iterations}: {e}")
            break

        r_next = stationary_residual(m_next, p_next, cfg)
        iterations += 1
        pseudo_time += h
        h = h * 1.5 if r_next < residual else h * 0.5
        m, p, residual = m_next, p_next, r_next

        if residual < best[0]:
            best = (residual, m, p)
        if iterations % 500 == 0:
            logger.debug(f"Steady: iteration {iterations}, residual {residual:.3e}, h {h:.3e}")

    residual, m, p = best
    converged = residual <= tol
    polished = 0
    if converged:
        m, p, residual, polished = _polish(m, p, cfg, S, residual)

    result = SteadyResult(m, p, residual, iterations, converged, pseudo_time, polished)
    if converged:
        logger.info(
            f"Steady: kappa={cfg.kappa} converged in {iterations} steps, residual {residual:.3e}, "
            f"|m|_inf={result.m_inf_linf:.3e}"
        )
    else:
        logger.warning(
            f"Steady: kappa={cfg.kappa} not converged after {iterations} steps, best residual {residual:.3e}"
        )
    return result


# ===== LINEAR STABILITY =====

@dataclass
class LinearStability:
    """max |grad p*|^2 against the damping of the linearized conductance equation at m = 0."""
    max_grad_sq: float
    threshold: float
    kappa: float
    gamma: float

    @property
    def stable(self) -> bool:
        return self.max_grad_sq < self.threshold

    def describe(self) -> str:
        verdict = 'm = 0 linearly stable' if self.stable else 'm = 0 may be unstable'
        return f"max|grad p*|^2 {self.max_grad_sq:.4g} vs threshold {self.threshold:.4g} ({verdict})"


def semi_trivial_stability(cfg: SimulationConfig) -> LinearStability:
    """
    Sufficient condition for linear stability of the semi-trivial state.

    Linearized at m = 0 the conductance equation reads
    m_t = kappa lap m - c m + (grad p* . m) grad p*, with c = 1 for gamma = 1 and
    c = 0 otherwise. The activation part is bounded by max |grad p*|^2, so
    m = 0 is stable whenever that stays below c + kappa * lambda_1, with
    lambda_1 = pi^2 (1/lx^2 + 1/ly^2) the first Dirichlet eigenvalue.
    """
    grid = cfg.grid
    p_star = semi_trivial_pressure(cfg.source, grid, cfg.cg_tol)
    grad = gradient(p_star)
    max_grad_sq = float(np.max(grad.m1.values ** 2 + grad.m2.values ** 2))
    lambda_1 = math.pi ** 2 * (1.0 / grid.lx ** 2 + 1.0 / grid.ly ** 2)
    damping = 1.0 if cfg.gamma == 1.0 else 0.0
    return LinearStability(max_grad_sq, damping + cfg.kappa * lambda_1, cfg.kappa, cfg.gamma)


# ===== DECAY FITS =====

@dataclass
class DecayFit:
    mu_hat: float
    r_squared: float
    window: Tuple[float, float]
    samples: int
    quantity: str
    intercept: float = 0.0


def _quantity(record: EnergyRecord, quantity: str) -> float:
    if quantity == 'm_linf':
        return record.m_linf
    if quantity == 'dp_h1':
        return record.dp_semitrivial
    return math.sqrt(record.norms.m_l2sq)


def fit_decay_rate(trajectory: Sequence[EnergyRecord], quantity: str = 'm_linf',
                   window: Optional[Tuple[float, float]] = None, floor: float = 1e-10) -> DecayFit:
    """
    Exponential rate from a least-squares line through log(quantity) against t.

    Without an explicit window the first 20% of the horizon is discarded and
    the next 60% is fitted. Either window is cut short before the first
    non-positive sample or the first sample below 100 * floor.

    Args:
        trajectory: Records in time order
        quantity: 'm_linf', 'dp_h1' or 'm_l2'
        window: Optional (t_start, t_end)
        floor: Solver noise floor

    Returns:
        DecayFit with mu_hat = -slope

    Raises:
        DecayFitError: fewer than 10 usable samples
    """
    if quantity not in DECAY_QUANTITIES:
        raise ValidationError('quantity', f"unknown quantity {quantity!r}, expected one of {DECAY_QUANTITIES}")

    t = np.array([r.t for r in trajectory], dtype=float)
    q = np.array([_quantity(r, quantity) for r in trajectory], dtype=float)

    if window is None:
        if t.size < 2:
            raise DecayFitError(f"only {t.size} samples of {quantity}")
        horizon = t[-1] - t[0]
        window = (t[0] + 0.2 * horizon, t[0] + 0.8 * horizon)

    stop = len(q)
    bad = np.flatnonzero((q <= 0.0) | (q < 100.0 * floor))
    if bad.size:
        stop = int(bad[0])
    t, q = t[:stop], q[:stop]

    mask = (t >= window[0]) & (t <= window[1])
    t, q = t[mask], q[mask]
    if t.size < MIN_FIT_SAMPLES:
        raise DecayFitError(
            f"{t.size} usable samples of {quantity} in window [{window[0]:.4g}, {window[1]:.4g}], "
            f"need {MIN_FIT_SAMPLES}"
        )

    fit = linregress(t, np.log(q))
    r_squared = float(fit.rvalue ** 2) if np.isfinite(fit.rvalue) else 0.0
    return DecayFit(
        mu_hat=float(-fit.slope),
        r_squared=r_squared,
        window=(float(t[0]), float(t[-1])),
        samples=int(t.size),
        quantity=quantity,
        intercept=float(fit.intercept),
    )


# ===== CONTRACTION =====

@dataclass
class ContractionTrace:
    """||m_a - m_b||_L2 and ||grad(p_a - p_b)||_L2 along two lockstep runs."""
    times: List[float] = field(default_factory=list)
    dm_l2: List[float] = field(default_factory=list)
    dp_h1: List[float] = field(default_factory=list)

    def nonincreasing_after(self, t0: float, rtol: float = 1e-9, atol: float = 0.0) -> bool:
        values = [d for t, d in zip(self.times, self.dm_l2) if t >= t0]
        return all(b <= a * (1.0 + rtol) + atol for a, b in zip(values, values[1:]))

    @property
    def final(self) -> float:
        return self.dm_l2[-1] if self.dm_l2 else 0.0


def _difference_norms(a, b) -> Tuple[float, float]:
    grid = a.m.grid
    d1 = a.m.m1.values - b.m.m1.values
    d2 = a.m.m2.values - b.m.m2.values
    dm = math.sqrt(max(integrate(ScalarField(grid, d1 ** 2 + d2 ** 2)), 0.0))
    return dm, semitrivial_distance(a.p, b.p)


def contraction_test(cfg: SimulationConfig, m0_a: VectorField2, m0_b: VectorField2) -> ContractionTrace:
    """
    Step two solutions with identical schedules and record their distance.

    Raises:
        SimulationError: a step failed in either run
    """
    trace = ContractionTrace()
    try:
        a = initial_state(cfg, m0_a)
        b = initial_state(cfg, m0_b)
    except BTNError as e:
        raise SimulationError(f"contraction setup failed: {e}", [], cause=e) from e

    def record(t: float) -> None:
        dm, dp = _difference_norms(a, b)
        trace.times.append(t)
        trace.dm_l2.append(dm)
        trace.dp_h1.append(dp)

    record(0.0)
    for n in range(cfg.n_steps):
        try:
            a = step(a, cfg)
            b = step(b, cfg)
        except BTNError as e:
            raise SimulationError(f"contraction run aborted at step {n + 1}: {e}", [], cause=e) from e
        if a.step_index % cfg.record_every == 0:
            record(a.t)

    logger.info(f"Contraction: kappa={cfg.kappa}, |dm| {trace.dm_l2[0]:.3e} -> {trace.final:.3e}")
    return trace


# ===== KAPPA SWEEP =====

@dataclass
class SweepRow:
    kappa: float
    m_inf_linf: float
    mu_hat: float
    r_squared: float
    converged: bool
    steps: int
    residual: float = float('nan')
    error: Optional[str] = None

    @property
    def rate_per_kappa(self) -> float:
        return self.mu_hat / self.kappa

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SweepRow':
        return cls(**data)


@dataclass
class SweepReport:
    rows: List[SweepRow]
    crossover_kappa: Optional[float] = None

    def to_dict(self) -> dict:
        return {'rows': [row.to_dict() for row in self.rows], 'crossover_kappa': self.crossover_kappa}


def sweep_row(cfg: SimulationConfig) -> SweepRow:
    """Steady solve from cfg.initial plus a decay fit on a dynamic run, for one kappa."""
    try:
        steady = solve_steady(cfg)
    except BTNError as e:
        logger.warning(f"Sweep kappa={cfg.kappa}: steady solve failed: {e}")
        return SweepRow(cfg.kappa, float('nan'), float('nan'), float('nan'), False, 0, error=f"{e.code}: {e}")

    mu_hat, r_squared, error = float('nan'), float('nan'), None
    try:
        result = run(cfg)
        fit = fit_decay_rate(result.trajectory, 'm_linf', floor=cfg.cg_tol)
        mu_hat, r_squared = fit.mu_hat, fit.r_squared
    except BTNError as e:
        error = f"{e.code}: {e}"
        logger.warning(f"Sweep kappa={cfg.kappa}: decay fit unavailable: {e}")

    return SweepRow(
        kappa=cfg.kappa,
        m_inf_linf=steady.m_inf_linf,
        mu_hat=mu_hat,
        r_squared=r_squared,
        converged=steady.converged,
        steps=steady.iterations,
        residual=steady.residual,
        error=error,
    )


def find_crossover(rows: Sequence[SweepRow], trivial_tol: float = TRIVIAL_TOL) -> Optional[float]:
    """Smallest kappa from which every larger kappa is semi-trivial, if a transition occurs."""
    ordered = sorted(rows, key=lambda r: r.kappa)
    nontrivial = [i for i, r in enumerate(ordered) if not r.m_inf_linf < trivial_tol]
    if not nontrivial or nontrivial[-1] == len(ordered) - 1:
        return None
    return ordered[nontrivial[-1] + 1].kappa


async def run_sweep(base_cfg: SimulationConfig, kappas: Sequence[float],
                    workers: Optional[int] = None, use_cache: bool = False) -> SweepReport:
    """
    Run sweep_row for every kappa; rows are merged in kappa order.

    With workers > 1 the entries run in a process pool through run_in_executor;
    otherwise inline. Cached rows are reused when use_cache is set.
    """
    kappas = [float(k) for k in kappas]
    if not kappas:
        raise ValidationError('kappas', "at least one kappa is required")
    if any(not k > 0 for k in kappas):
        raise ValidationError('kappas', f"all kappas must be positive, got {kappas}")

    workers = settings.SWEEP_WORKERS if workers is None else max(1, workers)
    configs = [base_cfg.with_updates(kappa=k) for k in kappas]
    keys = [SweepCache.make_key(serialize_config(cfg), f"{__version__}|sweep") for cfg in configs]
    rows: List[Optional[SweepRow]] = [None] * len(configs)

    if use_cache:
        for i, key in enumerate(keys):
            cached = await SweepCache.get(key)
            if cached:
                rows[i] = SweepRow.from_dict(cached)

    pending = [i for i, row in enumerate(rows) if row is None]
    logger.info(f"Sweep: {len(kappas)} kappas, {len(pending)} to compute, workers={workers}")

    if workers > 1 and len(pending) > 1:
        loop = asyncio.get_running_loop()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            computed = await asyncio.gather(
                *(loop.run_in_executor(pool, sweep_row, configs[i]) for i in pending)
            )
    else:
        computed = [sweep_row(configs[i]) for i in pending]

    for i, row in zip(pending, computed):
        rows[i] = row
        logger.info(
            f"Sweep row kappa={row.kappa}: |m_inf|={row.m_inf_linf:.3e}, mu={row.mu_hat:.4g}, "
            f"r2={row.r_squared:.4f}, converged={row.converged}"
        )
        if use_cache and row.error is None:
            await SweepCache.set(keys[i], row.kappa, row.to_dict())

    ordered = sorted(rows, key=lambda r: r.kappa)
    crossover = find_crossover(ordered)
    if crossover is None:
        logger.info("Sweep: no semi-trivial crossover inside the kappa list")
    else:
        logger.info(f"Sweep: crossover to the semi-trivial state at kappa={crossover}")
    return SweepReport(rows=ordered, crossover_kappa=crossover)


def kappa_sweep(base_cfg: SimulationConfig, kappas: Sequence[float],
                workers: Optional[int] = None, use_cache: bool = False) -> SweepReport:
    """Synchronous wrapper around run_sweep."""
    return asyncio.run(run_sweep(base_cfg, kappas, workers=workers, use_cache=use_cache))


# ===== THRESHOLD =====

@dataclass
class ThresholdEstimate:
    kappa_lo: float
    kappa_hi: float
    bracketed: bool
    evaluations: List[Tuple[float, float]] = field(default_factory=list)

    @property
    def estimate(self) -> float:
        return math.sqrt(self.kappa_lo * self.kappa_hi)


def bisect_kappa_threshold(base_cfg: SimulationConfig, kappa_lo: float, kappa_hi: float,
                           factor: float = 1.2, trivial_tol: float = TRIVIAL_TOL) -> ThresholdEstimate:
    """
    Geometric bisection of the smallest kappa whose steady state is semi-trivial.

    Requires a non-trivial steady state at kappa_lo and a semi-trivial one at
    kappa_hi; otherwise the estimate is returned with bracketed=False.
    """
    if not 0 < kappa_lo < kappa_hi:
        raise ValidationError('kappas', f"need 0 < kappa_lo < kappa_hi, got {kappa_lo}, {kappa_hi}")
    if not factor > 1.0:
        raise ValidationError('factor', f"bisection factor must exceed 1, got {factor}")

    evaluations: List[Tuple[float, float]] = []

    def trivial(kappa: float) -> bool:
        linf = solve_steady(base_cfg.with_updates(kappa=kappa)).m_inf_linf
        evaluations.append((kappa, linf))
        return linf < trivial_tol

    if trivial(kappa_lo) or not trivial(kappa_hi):
        logger.warning(f"Threshold: [{kappa_lo}, {kappa_hi}] does not bracket the transition")
        return ThresholdEstimate(kappa_lo, kappa_hi, False, evaluations)

    lo, hi = kappa_lo, kappa_hi
    while hi / lo > factor:
        mid = math.sqrt(lo * hi)
        if trivial(mid):
            hi = mid
        else:
            lo = mid

    logger.info(f"Threshold: kappa in [{lo:.4g}, {hi:.4g}]")
    return ThresholdEstimate(lo, hi, True, evaluations)
