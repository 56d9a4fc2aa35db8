"""
Scenario files for btn-sim
Flat `key = value` text with `#` comments, parsed into a validated SimulationConfig
"""

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Tuple

import numpy as np

from btnsim.error_handlers import ConfigParseError, ValidationError
from btnsim.grid import Grid, ScalarField, VectorField2, zero_boundary


logger = logging.getLogger(__name__)


INITIAL_KINDS = ('sines', 'random', 'zero')

# Modes mixed into the random initial condition along each axis
RANDOM_MODES = 4


def _require_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(name, f"must be finite, got {value}")
    return value


@dataclass(frozen=True)
class GaussianTerm:
    """a * exp(-((x - cx)^2 + (y - cy)^2) / (2 sigma^2))"""
    cx: float
    cy: float
    amplitude: float
    sigma: float

    def __post_init__(self):
        for name in ('cx', 'cy', 'amplitude', 'sigma'):
            object.__setattr__(self, name, _require_finite(f"source.{name}", getattr(self, name)))
        if self.sigma <= 0.0:
            raise ValidationError('source.sigma', f"width must be positive, got {self.sigma}")

    def evaluate(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        r2 = (X - self.cx) ** 2 + (Y - self.cy) ** 2
        return self.amplitude * np.exp(-r2 / (2.0 * self.sigma ** 2))


@dataclass(frozen=True)
class SourceSpec:
    """Sum of Gaussian sources (positive amplitude) and sinks (negative)."""
    terms: Tuple[GaussianTerm, ...]

    def __post_init__(self):
        object.__setattr__(self, 'terms', tuple(self.terms))
        if not self.terms:
            raise ValidationError('source', "at least one Gaussian term is required")

    @classmethod
    def default_dipole(cls) -> 'SourceSpec':
        return cls((
            GaussianTerm(0.25, 0.5, 20.0, 0.08),
            GaussianTerm(0.75, 0.5, -20.0, 0.08),
        ))

    def field(self, grid: Grid) -> ScalarField:
        X, Y = grid.coordinates
        values = sum(term.evaluate(X, Y) for term in self.terms)
        return ScalarField(grid, values)


@dataclass(frozen=True)
class InitialSpec:
    """
    Initial conductance m0.

    sines:  amplitude * sin(k pi x / lx) sin(l pi y / ly) * direction / |direction|
    random: seeded combination of the first few sine modes per component,
            scaled so that max |m0| equals amplitude
    zero:   m0 == 0
    """
    kind: str = 'sines'
    amplitude: float = 1.0
    direction: Tuple[float, float] = (1.0, 0.0)
    modes: Tuple[int, int] = (1, 1)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in INITIAL_KINDS:
            raise ValidationError('init', f"unknown kind {self.kind!r}, expected one of {', '.join(INITIAL_KINDS)}")
        object.__setattr__(self, 'amplitude', _require_finite('init_amplitude', self.amplitude))

        direction = tuple(_require_finite('init_direction', d) for d in self.direction)
        if len(direction) != 2:
            raise ValidationError('init_direction', f"expected two components, got {len(direction)}")
        if self.kind == 'sines' and direction == (0.0, 0.0):
            raise ValidationError('init_direction', "direction must be non-zero")
        object.__setattr__(self, 'direction', direction)

        modes = tuple(self.modes)
        if len(modes) != 2 or any(int(k) != k or k < 1 for k in modes):
            raise ValidationError('init_modes', f"expected two positive integers, got {self.modes}")
        object.__setattr__(self, 'modes', tuple(int(k) for k in modes))

        if int(self.seed) != self.seed or self.seed < 0:
            raise ValidationError('init_seed', f"seed must be a non-negative integer, got {self.seed}")
        object.__setattr__(self, 'seed', int(self.seed))

    def build(self, grid: Grid) -> VectorField2:
        """Boundary-zero initial conductance on `grid`."""
        if self.kind == 'zero':
            return VectorField2.zeros(grid)

        X, Y = grid.coordinates
        if self.kind == 'sines':
            k, l = self.modes
            envelope = np.sin(k * np.pi * X / grid.lx) * np.sin(l * np.pi * Y / grid.ly)
            norm = math.hypot(*self.direction)
            a1 = self.amplitude * envelope * self.direction[0] / norm
            a2 = self.amplitude * envelope * self.direction[1] / norm
            return VectorField2.from_arrays(grid, zero_boundary(a1), zero_boundary(a2))

        rng = np.random.default_rng(self.seed)
        components = []
        for _ in range(2):
            values = np.zeros(grid.shape)
            coefficients = rng.standard_normal((RANDOM_MODES, RANDOM_MODES))
            for k in range(1, RANDOM_MODES + 1):
                for l in range(1, RANDOM_MODES + 1):
                    # smooth: higher modes damped as 1/(k*l)
                    values += coefficients[k - 1, l - 1] / (k * l) * (
                        np.sin(k * np.pi * X / grid.lx) * np.sin(l * np.pi * Y / grid.ly)
                    )
            components.append(zero_boundary(values))

        peak = float(np.sqrt(np.max(components[0] ** 2 + components[1] ** 2)))
        scale = self.amplitude / peak if peak > 0.0 else 0.0
        return VectorField2.from_arrays(grid, components[0] * scale, components[1] * scale)


@dataclass(frozen=True)
class SimulationConfig:
    """One scenario: model parameters, discretization, source and initial data."""
    kappa: float = 1.0
    gamma: float = 1.0
    dt: float = 1e-3
    t_end: float = 1.0
    grid: Grid = field(default_factory=lambda: Grid(65, 65))
    source: SourceSpec = field(default_factory=SourceSpec.default_dipole)
    initial: InitialSpec = field(default_factory=InitialSpec)
    cg_tol: float = 1e-10
    record_every: int = 10
    adaptive_dt: bool = True
    steady_tol: float = 1e-8
    steady_max_steps: int = 5000
    snapshot: bool = False

    def __post_init__(self):
        for name in ('kappa', 'gamma', 'dt', 't_end', 'cg_tol', 'steady_tol'):
            object.__setattr__(self, name, _require_finite(name, getattr(self, name)))

        if self.kappa <= 0.0:
            raise ValidationError('kappa', f"diffusion coefficient must be positive, got {self.kappa}")
        if self.gamma < 1.0:
            raise ValidationError('gamma', f"metabolic exponent must satisfy gamma >= 1, got {self.gamma}")
        if self.dt <= 0.0:
            raise ValidationError('dt', f"time step must be positive, got {self.dt}")
        if self.t_end < 0.0:
            raise ValidationError('t_end', f"horizon must be non-negative, got {self.t_end}")
        if not 0.0 < self.cg_tol < 1.0:
            raise ValidationError('cg_tol', f"tolerance must lie in (0, 1), got {self.cg_tol}")
        if self.steady_tol <= 0.0:
            raise ValidationError('steady_tol', f"tolerance must be positive, got {self.steady_tol}")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ValidationError('record_every', f"must be an integer >= 1, got {self.record_every}")
        if int(self.steady_max_steps) != self.steady_max_steps or self.steady_max_steps < 1:
            raise ValidationError('steady_max_steps', f"must be an integer >= 1, got {self.steady_max_steps}")

        object.__setattr__(self, 'record_every', int(self.record_every))
        object.__setattr__(self, 'steady_max_steps', int(self.steady_max_steps))
        object.__setattr__(self, 'adaptive_dt', bool(self.adaptive_dt))
        object.__setattr__(self, 'snapshot', bool(self.snapshot))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def with_updates(self, **changes) -> 'SimulationConfig':
        return replace(self, **changes)

    def fingerprint(self) -> str:
        """SHA-1 of the canonical serialized scenario."""
        return hashlib.sha1(serialize_config(self).encode()).hexdigest()

    def to_dict(self) -> dict:
        return asdict(self)


# ===== PARSING =====

_FLOAT_KEYS = ('kappa', 'gamma', 'dt', 't_end', 'lx', 'ly', 'cg_tol', 'init_amplitude', 'steady_tol')
_INT_KEYS = ('nx', 'ny', 'record_every', 'init_seed', 'steady_max_steps')
_BOOL_KEYS = ('adaptive_dt', 'snapshot')
_OTHER_KEYS = ('source', 'init', 'init_direction', 'init_modes')
KNOWN_KEYS = _FLOAT_KEYS + _INT_KEYS + _BOOL_KEYS + _OTHER_KEYS

_TRUE = ('true', 'yes', 'on', '1')
_FALSE = ('false', 'no', 'off', '0')


def _parse_float(key: str, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValidationError(key, f"expected a number, got {text!r}") from None


def _parse_int(key: str, text: str) -> int:
    try:
        return int(text)
    except ValueError:
        value = _parse_float(key, text)
        if not value.is_integer():
            raise ValidationError(key, f"expected an integer, got {text!r}") from None
        return int(value)


def _parse_bool(key: str, text: str) -> bool:
    lowered = text.lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise ValidationError(key, f"expected true/false, got {text!r}")


def _parse_list(key: str, text: str, count: int) -> List[str]:
    parts = [part.strip() for part in text.split(',')]
    if len(parts) != count or any(not part for part in parts):
        raise ValidationError(key, f"expected {count} comma-separated values, got {text!r}")
    return parts


def parse_config(text: str) -> SimulationConfig:
    """
    Parse a scenario file.

    Args:
        text: Lines of `key = value`; `#` starts a comment; `source` may repeat
            as `source = cx, cy, amplitude, sigma`

    Returns:
        Validated SimulationConfig; missing keys take defaults

    Raises:
        ConfigParseError: malformed line, unknown or duplicated key (with line number)
        ValidationError: value out of range, naming the field
    """
    values: Dict[str, str] = {}
    sources: List[GaussianTerm] = []

    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigParseError(f"expected 'key = value', got {raw.strip()!r}", line_number)

        key, value = (part.strip() for part in line.split('=', 1))
        if not key or not value:
            raise ConfigParseError(f"empty key or value in {raw.strip()!r}", line_number)
        if key not in KNOWN_KEYS:
            raise ConfigParseError(f"unknown key {key!r}", line_number)

        if key == 'source':
            cx, cy, amplitude, sigma = (_parse_float('source', part) for part in _parse_list('source', value, 4))
            sources.append(GaussianTerm(cx, cy, amplitude, sigma))
            continue
        if key in values:
            raise ConfigParseError(f"duplicate key {key!r}", line_number)
        values[key] = value

    kwargs = {}
    for key in ('kappa', 'gamma', 'dt', 't_end', 'cg_tol', 'steady_tol'):
        if key in values:
            kwargs[key] = _parse_float(key, values[key])
    for key in ('record_every', 'steady_max_steps'):
        if key in values:
            kwargs[key] = _parse_int(key, values[key])
    for key in _BOOL_KEYS:
        if key in values:
            kwargs[key] = _parse_bool(key, values[key])

    default_grid = Grid(65, 65)
    kwargs['grid'] = Grid(
        nx=_parse_int('nx', values['nx']) if 'nx' in values else default_grid.nx,
        ny=_parse_int('ny', values['ny']) if 'ny' in values else default_grid.ny,
        lx=_parse_float('lx', values['lx']) if 'lx' in values else default_grid.lx,
        ly=_parse_float('ly', values['ly']) if 'ly' in values else default_grid.ly,
    )

    if sources:
        kwargs['source'] = SourceSpec(tuple(sources))

    default_initial = InitialSpec()
    kwargs['initial'] = InitialSpec(
        kind=values.get('init', default_initial.kind),
        amplitude=_parse_float('init_amplitude', values['init_amplitude']) if 'init_amplitude' in values
        else default_initial.amplitude,
        direction=tuple(_parse_float('init_direction', part)
                        for part in _parse_list('init_direction', values['init_direction'], 2))
        if 'init_direction' in values else default_initial.direction,
        modes=tuple(_parse_int('init_modes', part) for part in _parse_list('init_modes', values['init_modes'], 2))
        if 'init_modes' in values else default_initial.modes,
        seed=_parse_int('init_seed', values['init_seed']) if 'init_seed' in values else default_initial.seed,
    )

    cfg = SimulationConfig(**kwargs)
    logger.debug(f"Parsed scenario: kappa={cfg.kappa}, gamma={cfg.gamma}, grid={cfg.grid.nx}x{cfg.grid.ny}")
    return cfg


def serialize_config(cfg: SimulationConfig) -> str:
    """Canonical text form; parse_config(serialize_config(cfg)) == cfg."""
    lines = [
        f"kappa = {cfg.kappa!r}",
        f"gamma = {cfg.gamma!r}",
        f"dt = {cfg.dt!r}",
        f"t_end = {cfg.t_end!r}",
        f"nx = {cfg.grid.nx}",
        f"ny = {cfg.grid.ny}",
        f"lx = {cfg.grid.lx!r}",
        f"ly = {cfg.grid.ly!r}",
        f"cg_tol = {cfg.cg_tol!r}",
        f"record_every = {cfg.record_every}",
        f"adaptive_dt = {'true' if cfg.adaptive_dt else 'false'}",
        f"steady_tol = {cfg.steady_tol!r}",
        f"steady_max_steps = {cfg.steady_max_steps}",
        f"snapshot = {'true' if cfg.snapshot else 'false'}",
        f"init = {cfg.initial.kind}",
        f"init_amplitude = {cfg.initial.amplitude!r}",
        f"init_direction = {cfg.initial.direction[0]!r}, {cfg.initial.direction[1]!r}",
        f"init_modes = {cfg.initial.modes[0]}, {cfg.initial.modes[1]}",
        f"init_seed = {cfg.initial.seed}",
    ]
    for term in cfg.source.terms:
        lines.append(f"source = {term.cx!r}, {term.cy!r}, {term.amplitude!r}, {term.sigma!r}")
    return '\n'.join(lines) + '\n'
