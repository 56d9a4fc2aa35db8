"""
Conductance dynamics m_t - kappa lap m + |m|^(2(gamma-1)) m = (m . grad p) grad p
IMEX backward Euler stepping with a pressure re-solve after every step
"""

import logging
import math
import os
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from btnsim.analysis import EnergyRecord, energy, make_record
from btnsim.error_handlers import BTNError, SimulationError, StepError, TimeStepError, ValidationError
from btnsim.grid import (
    Grid, ScalarField, VectorField2, gradient, integrate, laplacian_dirichlet, zero_boundary,
)
from btnsim.outputs import write_field
from btnsim.pressure import assemble_pressure_operator, five_point_laplacian, solve_pressure_info
from btnsim.scenario import SimulationConfig, SourceSpec
from btnsim.solvers import pcg


logger = logging.getLogger(__name__)


# Largest power-of-two split of one outer step
MAX_HALVINGS = 20


@dataclass(frozen=True, eq=False)
class SimulationState:
    """
    Snapshot of the coupled system after `step_index` steps.

    mt_l2sq is ||(m^{n+1} - m^n)/h||^2 averaged over the substeps of the last
    outer step.
    """
    t: float
    m: VectorField2
    p: ScalarField
    step_index: int = 0
    mt_l2sq: float = 0.0
    substeps: int = 1


@dataclass
class RunResult:
    trajectory: List[EnergyRecord]
    final_state: SimulationState
    flagged_steps: int = 0
    max_energy_increase: float = 0.0
    snapshots: List[str] = field(default_factory=list)


# ===== CACHED SCENARIO DATA =====

@lru_cache(maxsize=32)
def source_field(source: SourceSpec, grid: Grid) -> ScalarField:
    return source.field(grid)


@lru_cache(maxsize=32)
def semi_trivial_pressure(source: SourceSpec, grid: Grid, tol: float) -> ScalarField:
    """p* for the scenario source, solved once per (source, grid, tol)."""
    S = source_field(source, grid)
    p, _ = solve_pressure_info(VectorField2.zeros(grid), S, tol)
    return p


@lru_cache(maxsize=32)
def diffusion_operator(grid: Grid, coefficient: float) -> sp.csr_matrix:
    """I + coefficient * (-lap_h) on interior nodes."""
    L = five_point_laplacian(grid)
    return (sp.identity(L.shape[0], format='csr') + coefficient * L).tocsr()


# ===== POINTWISE TERMS =====

def _reaction_prefactor(sq: np.ndarray, gamma: float) -> np.ndarray:
    if gamma == 1.0:
        return np.ones_like(sq)
    positive = sq > 0.0
    safe = np.where(positive, sq, 1.0)
    return np.where(positive, np.exp((gamma - 1.0) * np.log(safe)), 0.0)


def reaction(m: VectorField2, gamma: float) -> VectorField2:
    """
    Metabolic term |m|^(2(gamma-1)) m.

    The prefactor is exp((gamma-1) log |m|^2), taken as 0 where m vanishes for
    gamma > 1 and as exactly 1 for gamma == 1.
    """
    if not gamma >= 1.0:
        raise ValidationError('gamma', f"gamma = {gamma} violates gamma >= 1")
    factor = _reaction_prefactor(m.magnitude_sq(), gamma)
    return VectorField2(
        m.m1.with_values(factor * m.m1.values),
        m.m2.with_values(factor * m.m2.values),
    )


def activation(m: VectorField2, p: ScalarField) -> VectorField2:
    """Activation (m . grad p) grad p with the nodal gradient; zero on boundary nodes."""
    grad = gradient(p)
    g1, g2 = grad.m1.values, grad.m2.values
    s = m.m1.values * g1 + m.m2.values * g2
    return VectorField2.from_arrays(m.grid, zero_boundary(s * g1), zero_boundary(s * g2))


def explicit_dt_bound(m: VectorField2, p: ScalarField, gamma: float) -> float:
    """0.5 / (1 + max |grad p|^2 + max |m|^(2(gamma-1)))."""
    grad = gradient(p)
    g1, g2 = grad.m1.values, grad.m2.values
    grad_sq = float(np.max(g1 ** 2 + g2 ** 2))
    metabolic = m.max_norm() ** (2.0 * (gamma - 1.0))
    return 0.5 / (1.0 + grad_sq + metabolic)


def energy_tolerance(cfg: SimulationConfig, mt_l2sq: float) -> float:
    """Allowed per-step energy increase 10 dt^2 max(1, ||m_t||^2) + 10 cg_tol."""
    return 10.0 * cfg.dt ** 2 * max(1.0, mt_l2sq) + 10.0 * cfg.cg_tol


def conductance_residual(m: VectorField2, p: ScalarField, kappa: float, gamma: float) -> VectorField2:
    """-kappa lap m + |m|^(2(gamma-1)) m - (m . grad p) grad p at interior nodes."""
    react = reaction(m, gamma)
    act = activation(m, p)
    parts = []
    for comp, r, a in ((m.m1, react.m1, act.m1), (m.m2, react.m2, act.m2)):
        lap = laplacian_dirichlet(comp).values
        parts.append(zero_boundary(-kappa * lap + r.values - a.values))
    return VectorField2.from_arrays(m.grid, *parts)


def stationary_residual(m: VectorField2, p: ScalarField, cfg: SimulationConfig) -> float:
    """L2 norm of the discrete stationary residual of both equations."""
    grid = m.grid
    S = source_field(cfg.source, grid)
    rm = conductance_residual(m, p, cfg.kappa, cfg.gamma)

    A = assemble_pressure_operator(m)
    rp = A @ np.ascontiguousarray(p.interior).ravel() - np.ascontiguousarray(S.interior).ravel()
    rp_field = ScalarField(grid, grid.embed_interior(rp) ** 2)

    total = integrate(ScalarField(grid, rm.magnitude_sq())) + integrate(rp_field)
    return math.sqrt(max(total, 0.0))


# ===== TIME STEPPING =====

def initial_state(cfg: SimulationConfig, m0: Optional[VectorField2] = None) -> SimulationState:
    """State at t = 0 with p0 solved against m0."""
    grid = cfg.grid
    m0 = cfg.initial.build(grid) if m0 is None else m0
    if m0.grid != grid:
        raise ValidationError('grid', "initial conductance lives on a different grid")
    S = source_field(cfg.source, grid)
    p0, _ = solve_pressure_info(m0, S, cfg.cg_tol)
    return SimulationState(t=0.0, m=m0, p=p0, step_index=0)


def imex_update(m: VectorField2, p: ScalarField, S: ScalarField, cfg: SimulationConfig,
                h: float) -> Tuple[VectorField2, ScalarField]:
    """One IMEX update of size h followed by the warm-started pressure solve."""
    grid = m.grid
    act = activation(m, p)
    react = reaction(m, cfg.gamma)
    A = diffusion_operator(grid, h * cfg.kappa)

    updated = []
    for comp, a, r in ((m.m1, act.m1, react.m1), (m.m2, act.m2, react.m2)):
        current = np.ascontiguousarray(comp.interior).ravel()
        rhs = current + h * (np.ascontiguousarray(a.interior).ravel() - np.ascontiguousarray(r.interior).ravel())
        result = pcg(A, rhs, cfg.cg_tol, x0=current)
        updated.append(grid.embed_interior(result.x))

    m_next = VectorField2.from_arrays(grid, *updated)
    p_next, _ = solve_pressure_info(m_next, S, cfg.cg_tol, x0=p)
    return m_next, p_next


def step(state: SimulationState, cfg: SimulationConfig) -> SimulationState:
    """
    Advance one outer step of size cfg.dt.

    Diffusion is implicit, reaction and activation explicit:
    (I - h kappa lap_h) m^{n+1} = m^n + h [activation(m^n, p^n) - reaction(m^n)],
    then p^{n+1} solves the pressure problem for m^{n+1} (warm started).

    When dt exceeds the explicit-term bound and adaptive_dt is on, the step is
    split into 2^k equal substeps so the outer schedule stays uniform.

    Raises:
        TimeStepError: bound violated with adaptive_dt off
        StepError: an inner CG solve failed
    """
    grid = cfg.grid
    S = source_field(cfg.source, grid)
    bound = explicit_dt_bound(state.m, state.p, cfg.gamma)

    substeps = 1
    if cfg.dt > bound:
        if not cfg.adaptive_dt:
            raise TimeStepError(
                f"dt = {cfg.dt:.3e} exceeds the explicit-term bound {bound:.3e} at step {state.step_index}",
                cfg.dt, bound,
            )
        halvings = math.ceil(math.log2(cfg.dt / bound))
        if halvings > MAX_HALVINGS:
            raise TimeStepError(
                f"dt = {cfg.dt:.3e} needs more than 2^{MAX_HALVINGS} substeps (bound {bound:.3e})",
                cfg.dt, bound,
            )
        substeps = 2 ** halvings
        logger.debug(f"Step {state.step_index}: splitting dt={cfg.dt:.3e} into {substeps} substeps")

    h = cfg.dt / substeps
    m, p = state.m, state.p
    rate_sq = 0.0
    try:
        for _ in range(substeps):
            m_next, p = imex_update(m, p, S, cfg, h)
            d1 = (m_next.m1.values - m.m1.values) / h
            d2 = (m_next.m2.values - m.m2.values) / h
            rate_sq += integrate(ScalarField(grid, d1 ** 2 + d2 ** 2))
            m = m_next
    except BTNError as exc:
        raise StepError(f"step {state.step_index + 1} failed: {exc}", state.step_index + 1, cause=exc) from exc

    return SimulationState(
        t=state.t + cfg.dt,
        m=m,
        p=p,
        step_index=state.step_index + 1,
        mt_l2sq=rate_sq / substeps,
        substeps=substeps,
    )


def _write_snapshots(directory: str, state: SimulationState) -> List[str]:
    paths = []
    for name, fld in (('m1', state.m.m1), ('m2', state.m.m2), ('p', state.p)):
        path = os.path.join(directory, f"{name}_{state.step_index:06d}.btnf")
        write_field(path, fld)
        paths.append(path)
    return paths


def run(cfg: SimulationConfig, snapshot_dir: Optional[str] = None,
        m0: Optional[VectorField2] = None) -> RunResult:
    """
    Simulate from t = 0 to t_end in round(t_end/dt) steps.

    Energy is evaluated after every step and increases beyond energy_tolerance
    are flagged (not fatal). A record is kept every record_every steps plus the
    initial one.

    Args:
        cfg: Scenario
        snapshot_dir: When given, m1/m2/p are written there at every record
        m0: Optional initial conductance overriding cfg.initial

    Returns:
        RunResult with trajectory and final state

    Raises:
        SimulationError: a step failed; carries the partial trajectory
    """
    grid = cfg.grid
    S = source_field(cfg.source, grid)
    p_star = semi_trivial_pressure(cfg.source, grid, cfg.cg_tol)

    try:
        state = initial_state(cfg, m0)
    except BTNError as exc:
        raise SimulationError(f"initial pressure solve failed: {exc}", [], cause=exc) from exc

    E_prev = energy(state.m, state.p, cfg.kappa, cfg.gamma)
    records = [make_record(0.0, 0, state.m, state.p, S, p_star, cfg.kappa, cfg.gamma, E=E_prev)]
    snapshots = _write_snapshots(snapshot_dir, state) if snapshot_dir else []

    n_steps = cfg.n_steps
    flagged = 0
    max_increase = 0.0
    interval_rates: List[float] = []
    interval_flag = False

    logger.info(
        f"Run: kappa={cfg.kappa}, gamma={cfg.gamma}, dt={cfg.dt}, steps={n_steps}, "
        f"grid={grid.nx}x{grid.ny}"
    )

    for n in range(n_steps):
        try:
            state = step(state, cfg)
        except BTNError as exc:
            raise SimulationError(f"run aborted at step {n + 1}: {exc}", records, cause=exc) from exc

        E = energy(state.m, state.p, cfg.kappa, cfg.gamma)
        increase = E - E_prev
        max_increase = max(max_increase, increase)
        if increase > energy_tolerance(cfg, state.mt_l2sq):
            flagged += 1
            interval_flag = True
            logger.warning(
                f"Energy increase {increase:.3e} at step {state.step_index} (t={state.t:.6g}); dt may be too large"
            )
        E_prev = E
        interval_rates.append(state.mt_l2sq)

        if state.step_index % cfg.record_every == 0:
            record = make_record(
                state.t, state.step_index, state.m, state.p, S, p_star, cfg.kappa, cfg.gamma,
                E=E, previous=records[-1], mt_l2sq=float(np.mean(interval_rates)),
                energy_increase=interval_flag,
            )
            records.append(record)
            logger.debug(f"Record t={record.t:.6g}: E={record.E:.10e}, m_linf={record.m_linf:.3e}")
            interval_rates = []
            interval_flag = False
            if snapshot_dir:
                snapshots.extend(_write_snapshots(snapshot_dir, state))

    if flagged:
        logger.warning(f"{flagged} of {n_steps} steps increased the energy beyond tolerance")

    return RunResult(
        trajectory=records,
        final_state=state,
        flagged_steps=flagged,
        max_energy_increase=max_increase,
        snapshots=snapshots,
    )


# ===== CONVEXITY ORACLE =====

@dataclass
class ConvexityReport:
    gamma: float
    constant: float
    n_pairs: int
    violations: int
    min_ratio: float


def _monotone_map(v: np.ndarray, gamma: float) -> np.ndarray:
    # |v|^(2(gamma-1)) v along the last axis
    sq = np.sum(v ** 2, axis=-1, keepdims=True)
    return _reaction_prefactor(sq, gamma) * v


@lru_cache(maxsize=8)
def monotonicity_constant(gamma: float, resolution: int = 801) -> float:
    """
    Brute-force c_gamma = min (F(x) - F(y)).(x - y) / |x - y|^(2 gamma), F(v) = |v|^(2(gamma-1)) v.

    By homogeneity and rotation invariance x - y = e1 suffices; y ranges over
    a [-2, 2]^2 parameter grid that contains the minimizer y = -e1/2.
    """
    if not gamma >= 1.0:
        raise ValidationError('gamma', f"gamma = {gamma} violates gamma >= 1")
    axis = np.linspace(-2.0, 2.0, resolution)
    Y1, Y2 = np.meshgrid(axis, axis, indexing='ij')
    y = np.stack([Y1, Y2], axis=-1)
    x = y + np.array([1.0, 0.0])
    lhs = np.sum((_monotone_map(x, gamma) - _monotone_map(y, gamma)) * (x - y), axis=-1)
    return float(np.min(lhs))


def check_convexity_inequality(gamma: float, n_pairs: int = 100_000, seed: int = 0) -> ConvexityReport:
    """
    Sample random pairs x, y and count violations of
    (F(x) - F(y)).(x - y) >= c_gamma |x - y|^(2 gamma), with c_1 = 1.
    """
    constant = 1.0 if gamma == 1.0 else monotonicity_constant(gamma)
    rng = np.random.default_rng(seed)
    scale = 10.0 ** rng.uniform(-1.0, 1.0, size=(n_pairs, 2, 1))
    points = rng.standard_normal((n_pairs, 2, 2)) * scale
    x, y = points[:, 0, :], points[:, 1, :]

    d = x - y
    lhs = np.sum((_monotone_map(x, gamma) - _monotone_map(y, gamma)) * d, axis=-1)
    rhs = np.sum(d * d, axis=-1) ** gamma

    ratio = lhs / rhs
    violations = int(np.count_nonzero(lhs < constant * rhs * (1.0 - 1e-9)))
    report = ConvexityReport(gamma, constant, n_pairs, violations, float(np.min(ratio)))
    logger.info(f"Convexity gamma={gamma}: c={constant:.6f}, min ratio {report.min_ratio:.6f}, violations {violations}")
    return report
