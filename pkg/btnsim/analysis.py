"""
Energy functional and trajectory diagnostics
Dissipation accounting, regularity ratio ledger, L2 balance and pressure deviation checks
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from btnsim.error_handlers import DissipationError, ValidationError
from btnsim.grid import (
    NormSample, ScalarField, VectorField2, anisotropic_form, dirichlet_form, integrate, norm_suite,
)


logger = logging.getLogger(__name__)


# Relative tolerance on record spacing accepted as uniform
SPACING_RTOL = 1e-6


@dataclass(frozen=True)
class EnergyRecord:
    """
    One recorded point of a trajectory.

    mt_l2sq is the mean of ||(m^{n+1} - m^n)/dt||^2 over the steps since the
    previous record (0 for the initial record); dE_dt_est is the energy
    difference quotient over the same interval.
    """
    t: float
    step_index: int
    E: float
    dE_dt_est: float
    mt_l2sq: float
    norms: NormSample
    dp_semitrivial: float
    m_linf: float
    energy_increase: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def energy(m: VectorField2, p: ScalarField, kappa: float, gamma: float) -> float:
    """
    Discrete energy

        E = kappa/2 ||grad m||^2 + 1/(2 gamma) int |m|^(2 gamma) + 1/2 ||grad p||^2 + 1/2 ||m . grad p||^2

    with the same forms the pressure operator is assembled from.
    """
    if not gamma >= 1.0:
        raise ValidationError('gamma', f"gamma = {gamma} violates gamma >= 1")
    if not kappa > 0.0:
        raise ValidationError('kappa', f"kappa = {kappa} must be positive")

    sq = m.magnitude_sq()
    grad_m = dirichlet_form(m.m1) + dirichlet_form(m.m2)
    power = integrate(ScalarField(m.grid, sq ** gamma))
    return (
        0.5 * kappa * grad_m
        + power / (2.0 * gamma)
        + 0.5 * dirichlet_form(p)
        + 0.5 * anisotropic_form(m, p)
    )


def semitrivial_distance(p: ScalarField, p_star: ScalarField) -> float:
    """H1-seminorm proxy ||grad (p - p*)|| with the discrete Dirichlet form."""
    diff = p.with_values(p.values - p_star.values, boundary_zero=False)
    return math.sqrt(max(dirichlet_form(diff), 0.0))


def make_record(t: float, step_index: int, m: VectorField2, p: ScalarField, S: ScalarField,
                p_star: ScalarField, kappa: float, gamma: float, E: Optional[float] = None,
                previous: Optional[EnergyRecord] = None, mt_l2sq: float = 0.0,
                energy_increase: bool = False) -> EnergyRecord:
    """Build an EnergyRecord; dE_dt_est is taken against `previous` when given."""
    norms = norm_suite(m, p, S, gamma)
    E = energy(m, p, kappa, gamma) if E is None else E
    if previous is None or t == previous.t:
        rate = 0.0
    else:
        rate = (E - previous.E) / (t - previous.t)
    return EnergyRecord(
        t=t,
        step_index=step_index,
        E=E,
        dE_dt_est=rate,
        mt_l2sq=mt_l2sq,
        norms=norms,
        dp_semitrivial=semitrivial_distance(p, p_star),
        m_linf=norms.m_linf,
        energy_increase=energy_increase,
    )


# ===== DISSIPATION =====

@dataclass
class DissipationReport:
    """Comparison of dE/dt against -||m_t||^2 per record interval."""
    n_intervals: int
    record_spacing: float
    max_violation: float
    max_abs_violation: float
    max_energy_increase: float
    correlation: float
    energy_rates: List[float] = field(default_factory=list)
    dissipation_rates: List[float] = field(default_factory=list)

    def within(self, tolerance: float) -> bool:
        """Energy never grew by more than `tolerance` across a record interval."""
        return self.max_energy_increase <= tolerance


def _uniform_spacing(times: np.ndarray) -> float:
    spacing = np.diff(times)
    if np.any(spacing <= 0.0):
        raise DissipationError("record times must be strictly increasing")
    if not np.allclose(spacing, spacing[0], rtol=SPACING_RTOL, atol=0.0):
        raise DissipationError(
            f"non-uniform record spacing: {spacing.min():.6e} .. {spacing.max():.6e}"
        )
    return float(spacing[0])


def _correlation(a: np.ndarray, b: np.ndarray) -> float:
    if a.size < 2 or np.ptp(a) == 0.0 or np.ptp(b) == 0.0:
        # constant series: perfectly matched only if identical
        return 1.0 if np.allclose(a, b, rtol=0.0, atol=1e-14) else 0.0
    return float(np.corrcoef(a, b)[0, 1])


def dissipation_check(records: Sequence[EnergyRecord]) -> DissipationReport:
    """
    Discrete dissipation law dE/dt = -||m_t||^2 across record intervals.

    Args:
        records: At least two records with uniform time spacing

    Returns:
        DissipationReport with max signed and absolute violation of
        (E^{n+1} - E^n)/dt + mt_l2sq, the largest energy increase and the
        correlation of the two series

    Raises:
        DissipationError: fewer than two records or non-uniform spacing
    """
    if len(records) < 2:
        raise DissipationError(f"need at least two records, got {len(records)}")

    times = np.array([r.t for r in records])
    spacing = _uniform_spacing(times)

    energies = np.array([r.E for r in records])
    increases = np.diff(energies)
    energy_rates = increases / spacing
    dissipation = -np.array([r.mt_l2sq for r in records[1:]])
    violation = energy_rates - dissipation

    report = DissipationReport(
        n_intervals=len(increases),
        record_spacing=spacing,
        max_violation=float(np.max(violation)),
        max_abs_violation=float(np.max(np.abs(violation))),
        max_energy_increase=float(np.max(increases)),
        correlation=_correlation(energy_rates, dissipation),
        energy_rates=energy_rates.tolist(),
        dissipation_rates=dissipation.tolist(),
    )
    logger.debug(
        f"Dissipation: {report.n_intervals} intervals, max violation {report.max_violation:.3e}, "
        f"correlation {report.correlation:.6f}"
    )
    return report


# ===== LEDGER =====

@dataclass(frozen=True)
class LedgerRow:
    t: float
    step_index: int
    lap_p_ratio: float
    lap_m_ratio: float
    grad_lap_p_ratio: float
    max_lap_p_ratio: float
    max_lap_m_ratio: float
    max_grad_lap_p_ratio: float


@dataclass
class LemmaLedger:
    """
    Empirical ratios whose boundedness the regularity estimates predict.

        lap_p_ratio      = ||lap p|| / (1 + (1 + kappa^-1/2) ||lap m||)
        lap_m_ratio      = ||lap m|| / (1 + kappa^-1/2)
        grad_lap_p_ratio = ||grad lap p|| / (1 + (1 + kappa^-1/2) ||lap m||^2)

    The last one uses one-sided boundary stencils and is qualitative.
    """
    kappa: float
    rows: List[LedgerRow] = field(default_factory=list)

    def final_maxima(self) -> dict:
        if not self.rows:
            return {'lap_p_ratio': 0.0, 'lap_m_ratio': 0.0, 'grad_lap_p_ratio': 0.0}
        last = self.rows[-1]
        return {
            'lap_p_ratio': last.max_lap_p_ratio,
            'lap_m_ratio': last.max_lap_m_ratio,
            'grad_lap_p_ratio': last.max_grad_lap_p_ratio,
        }

    def stabilized(self, tail_fraction: float = 0.5, rel_growth: float = 0.01) -> bool:
        """Running maxima grow by at most rel_growth over the final tail_fraction of the rows."""
        if len(self.rows) < 2:
            return True
        start = self.rows[min(len(self.rows) - 1, int(len(self.rows) * (1.0 - tail_fraction)))]
        end = self.rows[-1]
        for name in ('max_lap_p_ratio', 'max_lap_m_ratio'):
            before, after = getattr(start, name), getattr(end, name)
            if after > before * (1.0 + rel_growth):
                return False
        return True


def lemma_ratio_ledger(records: Sequence[EnergyRecord], kappa: float) -> LemmaLedger:
    """Time series of the ratio diagnostics with running maxima (informational)."""
    c = 1.0 + kappa ** -0.5
    ledger = LemmaLedger(kappa=kappa)
    running = [0.0, 0.0, 0.0]

    for record in records:
        lap_p = math.sqrt(record.norms.lap_p_l2sq)
        lap_m = math.sqrt(record.norms.lap_m_l2sq)
        grad_lap_p = math.sqrt(record.norms.grad_lap_p_l2sq)
        ratios = (
            lap_p / (1.0 + c * lap_m),
            lap_m / c,
            grad_lap_p / (1.0 + c * lap_m ** 2),
        )
        running = [max(a, b) for a, b in zip(running, ratios)]
        ledger.rows.append(LedgerRow(record.t, record.step_index, *ratios, *running))

    maxima = ledger.final_maxima()
    logger.info(
        f"Ledger maxima: lap_p {maxima['lap_p_ratio']:.4e}, lap_m {maxima['lap_m_ratio']:.4e}, "
        f"grad_lap_p {maxima['grad_lap_p_ratio']:.4e}"
    )
    return ledger


# ===== SUPPLEMENTARY BALANCES =====

@dataclass
class BalanceReport:
    """Residual of 1/2 d/dt ||m||^2 + kappa ||grad m||^2 + int |m|^(2 gamma) = int (m . grad p)^2."""
    residuals: List[float]
    max_abs_residual: float
    relative_residual: float


def l2_balance_check(records: Sequence[EnergyRecord], kappa: float) -> BalanceReport:
    """
    L2 balance obtained by testing the conductance equation with m.

    The time derivative is a difference quotient across record intervals and the
    other terms are averaged over the two interval endpoints, so the residual is
    first order in the record spacing. relative_residual scales by the largest
    magnitude among the balance terms.

    Raises:
        DissipationError: fewer than two records or non-uniform spacing
    """
    if len(records) < 2:
        raise DissipationError(f"need at least two records, got {len(records)}")

    times = np.array([r.t for r in records])
    spacing = _uniform_spacing(times)

    m_l2sq = np.array([r.norms.m_l2sq for r in records])
    sink = np.array([kappa * r.norms.grad_m_l2sq + r.norms.m_l2gamma for r in records])
    gain = np.array([r.norms.mgradp_l2sq for r in records])

    half_rate = 0.5 * np.diff(m_l2sq) / spacing
    mean_sink = 0.5 * (sink[1:] + sink[:-1])
    mean_gain = 0.5 * (gain[1:] + gain[:-1])
    residuals = half_rate + mean_sink - mean_gain

    scale = max(float(np.max(np.abs(half_rate))), float(np.max(mean_sink)), float(np.max(mean_gain)))
    max_abs = float(np.max(np.abs(residuals)))
    relative = max_abs / scale if scale > 0.0 else 0.0
    return BalanceReport(residuals=residuals.tolist(), max_abs_residual=max_abs, relative_residual=relative)


@dataclass
class DeviationReport:
    """||grad (p - p*)|| against ||m||_inf^2 ||grad p||."""
    deviation: float
    bound: float
    holds: bool


def pressure_deviation_bound(m: VectorField2, p: ScalarField, p_star: ScalarField,
                             rtol: float = 1e-8) -> DeviationReport:
    """
    Check the pressure deviation estimate obtained from subtracting the two
    elliptic equations and testing with p - p*.

    `rtol` absorbs solver error relative to max(1, ||grad p||).
    """
    deviation = semitrivial_distance(p, p_star)
    grad_p = math.sqrt(max(dirichlet_form(p), 0.0))
    bound = m.max_norm() ** 2 * grad_p
    holds = deviation <= bound + rtol * max(1.0, grad_p)
    return DeviationReport(deviation=deviation, bound=bound, holds=holds)
