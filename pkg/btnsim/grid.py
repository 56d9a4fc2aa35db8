"""
Discrete calculus on a uniform 2-D node grid
Fields with homogeneous Dirichlet data, 5-point Laplacian, trapezoidal quadrature
and the discrete norm suite every diagnostic is built from
"""

import hashlib
import logging
from dataclasses import dataclass, asdict
from functools import cached_property
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.integrate import trapezoid

from btnsim.error_handlers import FieldError, ValidationError


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Grid:
    """
    Uniform node lattice on [0, lx] x [0, ly].

    Arrays living on the grid have shape (nx, ny) and are indexed [i, j] with
    x = i*hx along axis 0 and y = j*hy along axis 1; flattening is row-major.
    """

    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0

    def __post_init__(self):
        for name in ('nx', 'ny'):
            value = getattr(self, name)
            if int(value) != value or value < 3:
                raise ValidationError(name, f"node count must be an integer >= 3, got {value}")
            object.__setattr__(self, name, int(value))
        for name in ('lx', 'ly'):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value <= 0.0:
                raise ValidationError(name, f"side length must be positive, got {value}")
            object.__setattr__(self, name, value)

    @property
    def hx(self) -> float:
        return self.lx / (self.nx - 1)

    @property
    def hy(self) -> float:
        return self.ly / (self.ny - 1)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def n_interior(self) -> int:
        return (self.nx - 2) * (self.ny - 2)

    @cached_property
    def axes(self) -> Tuple[np.ndarray, np.ndarray]:
        """1-D node coordinates (x, y)."""
        return np.linspace(0.0, self.lx, self.nx), np.linspace(0.0, self.ly, self.ny)

    @cached_property
    def coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        """Node coordinate arrays (X, Y), each of shape (nx, ny)."""
        x, y = self.axes
        return np.meshgrid(x, y, indexing='ij')

    @cached_property
    def interior_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[1:-1, 1:-1] = True
        return mask

    @cached_property
    def interior_index(self) -> np.ndarray:
        """Flat (row-major) node indices of the interior nodes, in row-major order."""
        return np.flatnonzero(self.interior_mask.ravel())

    def fingerprint(self) -> str:
        """Stable hash identifying the grid geometry."""
        text = f"BTNGRID {self.nx} {self.ny} {self.lx!r} {self.ly!r}"
        return hashlib.sha1(text.encode()).hexdigest()

    def embed_interior(self, interior: np.ndarray) -> np.ndarray:
        """Place interior values into a full array with exact zeros on the boundary."""
        full = np.zeros(self.shape)
        full[1:-1, 1:-1] = np.asarray(interior).reshape(self.nx - 2, self.ny - 2)
        return full


def boundary_values(values: np.ndarray) -> np.ndarray:
    """All boundary-node values of a (nx, ny) array."""
    return np.concatenate([values[0, :], values[-1, :], values[1:-1, 0], values[1:-1, -1]])


def zero_boundary(values: np.ndarray) -> np.ndarray:
    """Copy of `values` with the boundary ring set to exactly 0."""
    out = np.array(values, dtype=np.float64)
    out[[0, -1], :] = 0.0
    out[:, [0, -1]] = 0.0
    return out


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values on a grid; read-only after construction."""

    grid: Grid
    values: np.ndarray
    boundary_zero: bool = False

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != self.grid.shape:
            if values.size != self.grid.n_nodes:
                raise FieldError(
                    f"field has {values.size} values, grid {self.grid.nx}x{self.grid.ny} needs {self.grid.n_nodes}"
                )
            values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise FieldError("field contains non-finite values")
        if self.boundary_zero and np.any(boundary_values(values) != 0.0):
            raise FieldError("boundary-zero field has non-zero boundary values")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @classmethod
    def zeros(cls, grid: Grid, boundary_zero: bool = True) -> 'ScalarField':
        return cls(grid, np.zeros(grid.shape), boundary_zero)

    @classmethod
    def from_function(cls, grid: Grid, fn: Callable[[np.ndarray, np.ndarray], np.ndarray],
                      boundary_zero: bool = False) -> 'ScalarField':
        """
        Sample fn(X, Y) at the nodes.

        With boundary_zero=True the boundary ring is clamped to exactly 0, which
        absorbs round-off such as sin(pi * 1.0) != 0.
        """
        X, Y = grid.coordinates
        values = np.broadcast_to(np.asarray(fn(X, Y), dtype=np.float64), grid.shape)
        if boundary_zero:
            values = zero_boundary(values)
        return cls(grid, values, boundary_zero)

    @property
    def interior(self) -> np.ndarray:
        return self.values[1:-1, 1:-1]

    def with_values(self, values: np.ndarray, boundary_zero: Optional[bool] = None) -> 'ScalarField':
        tag = self.boundary_zero if boundary_zero is None else boundary_zero
        return ScalarField(self.grid, values, tag)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True, eq=False)
class VectorField2:
    """Two scalar components (m1, m2) on one grid."""

    m1: ScalarField
    m2: ScalarField

    def __post_init__(self):
        if self.m1.grid != self.m2.grid:
            raise FieldError("vector components live on different grids")

    @property
    def grid(self) -> Grid:
        return self.m1.grid

    @property
    def boundary_zero(self) -> bool:
        return self.m1.boundary_zero and self.m2.boundary_zero

    @classmethod
    def zeros(cls, grid: Grid) -> 'VectorField2':
        return cls(ScalarField.zeros(grid), ScalarField.zeros(grid))

    @classmethod
    def from_arrays(cls, grid: Grid, a1: np.ndarray, a2: np.ndarray,
                    boundary_zero: bool = True) -> 'VectorField2':
        return cls(ScalarField(grid, a1, boundary_zero), ScalarField(grid, a2, boundary_zero))

    def magnitude_sq(self) -> np.ndarray:
        return self.m1.values ** 2 + self.m2.values ** 2

    def max_norm(self) -> float:
        """Max over nodes of the Euclidean magnitude |m|."""
        return float(np.sqrt(np.max(self.magnitude_sq())))


@dataclass(frozen=True)
class NormSample:
    """Discrete norms bounded along a trajectory."""

    grad_p_l2sq: float
    mgradp_l2sq: float
    grad_m_l2sq: float
    m_l2gamma: float
    lap_m_l2sq: float
    lap_p_l2sq: float
    m_linf: float
    m_l2sq: float
    grad_lap_p_l2sq: float
    work_pS: float

    def to_dict(self) -> dict:
        return asdict(self)


# ===== ARRAY KERNELS =====

def _gradient_arrays(values: np.ndarray, grid: Grid) -> Tuple[np.ndarray, np.ndarray]:
    # central inside, one-sided second order on the boundary
    g1 = np.gradient(values, grid.hx, axis=0, edge_order=2)
    g2 = np.gradient(values, grid.hy, axis=1, edge_order=2)
    return g1, g2


def _laplacian_arrays(u: np.ndarray, grid: Grid) -> np.ndarray:
    out = np.zeros_like(u)
    c = u[1:-1, 1:-1]
    out[1:-1, 1:-1] = (
        (u[2:, 1:-1] - 2.0 * c + u[:-2, 1:-1]) / grid.hx ** 2
        + (u[1:-1, 2:] - 2.0 * c + u[1:-1, :-2]) / grid.hy ** 2
    )
    return out


def _integrate_array(values: np.ndarray, grid: Grid) -> float:
    return float(trapezoid(trapezoid(values, dx=grid.hy, axis=1), dx=grid.hx))


def _dirichlet_arrays(u: np.ndarray, v: np.ndarray, grid: Grid) -> float:
    dxu = np.diff(u, axis=0) / grid.hx
    dxv = np.diff(v, axis=0) / grid.hx
    dyu = np.diff(u, axis=1) / grid.hy
    dyv = np.diff(v, axis=1) / grid.hy
    # x-edges carry the y-weight of their row, y-edges the x-weight of their column
    x_part = np.sum(_edge_weights(grid.ny)[None, :] * dxu * dxv)
    y_part = np.sum(_edge_weights(grid.nx)[:, None] * dyu * dyv)
    return float((x_part + y_part) * grid.hx * grid.hy)


def _edge_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    w[[0, -1]] = 0.5
    return w


def _cell_gradient_arrays(u: np.ndarray, grid: Grid) -> Tuple[np.ndarray, np.ndarray]:
    dx = ((u[1:, :-1] - u[:-1, :-1]) + (u[1:, 1:] - u[:-1, 1:])) / (2.0 * grid.hx)
    dy = ((u[:-1, 1:] - u[:-1, :-1]) + (u[1:, 1:] - u[1:, :-1])) / (2.0 * grid.hy)
    return dx, dy


def _cell_corners(a: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    return a[:-1, :-1], a[1:, :-1], a[:-1, 1:], a[1:, 1:]


def _anisotropic_arrays(m1: np.ndarray, m2: np.ndarray, u: np.ndarray, v: np.ndarray,
                        grid: Grid) -> float:
    ux, uy = _cell_gradient_arrays(u, grid)
    vx, vy = _cell_gradient_arrays(v, grid)
    total = np.zeros_like(ux)
    for c1, c2 in zip(_cell_corners(m1), _cell_corners(m2)):
        total += (c1 * ux + c2 * uy) * (c1 * vx + c2 * vy)
    return float(0.25 * np.sum(total) * grid.hx * grid.hy)


def _grad_lap_proxy(p: np.ndarray, grid: Grid) -> float:
    lap = _laplacian_arrays(p, grid)[1:-1, 1:-1]
    if min(lap.shape) < 3:
        return 0.0
    g1 = np.gradient(lap, grid.hx, axis=0, edge_order=2)
    g2 = np.gradient(lap, grid.hy, axis=1, edge_order=2)
    q = g1 ** 2 + g2 ** 2
    return float(trapezoid(trapezoid(q, dx=grid.hy, axis=1), dx=grid.hx))


# ===== PUBLIC OPERATIONS =====

def gradient(f: ScalarField) -> VectorField2:
    """
    Discrete gradient.

    Central differences at interior nodes and one-sided second-order differences
    at boundary nodes; exact on linear functions. The result is not tagged
    boundary-zero.

    Args:
        f: Scalar field

    Returns:
        Vector field (df/dx, df/dy)
    """
    g1, g2 = _gradient_arrays(f.values, f.grid)
    return VectorField2(ScalarField(f.grid, g1), ScalarField(f.grid, g2))


def laplacian_dirichlet(f: ScalarField) -> ScalarField:
    """
    5-point Laplacian on the zero-trace subspace.

    Args:
        f: Field with exactly zero boundary values

    Returns:
        Laplacian at interior nodes, exact zeros on the boundary

    Raises:
        FieldError: if f has non-zero boundary values
    """
    if np.any(boundary_values(f.values) != 0.0):
        raise FieldError("laplacian_dirichlet requires a boundary-zero field")
    return ScalarField(f.grid, _laplacian_arrays(f.values, f.grid), boundary_zero=True)


def integrate(f: ScalarField) -> float:
    """Trapezoidal quadrature of f over the rectangle."""
    return _integrate_array(f.values, f.grid)


def dirichlet_form(u: ScalarField, v: Optional[ScalarField] = None) -> float:
    """
    Discrete Dirichlet form sum over grid edges of D+u * D+v * hx * hy.

    For boundary-zero u, v this equals -integrate(u * laplacian_dirichlet(v)),
    so it is the quadratic form of the 5-point operator.
    """
    v = u if v is None else v
    return _dirichlet_arrays(u.values, v.values, u.grid)


def anisotropic_form(m: VectorField2, u: ScalarField, v: Optional[ScalarField] = None) -> float:
    """
    Discrete counterpart of the integral of (m . grad u)(m . grad v).

    Per cell the tensor m (x) m is the arithmetic mean over the cell's corner
    nodes and acts on the cell gradient. This is the bilinear form whose Hessian
    is the anisotropic part of the pressure operator.
    """
    v = u if v is None else v
    return _anisotropic_arrays(m.m1.values, m.m2.values, u.values, v.values, u.grid)


def norm_suite(m: VectorField2, p: ScalarField, S: ScalarField, gamma: float) -> NormSample:
    """
    Discrete norm quantities along a trajectory.

    Args:
        m: Conductance field (boundary-zero)
        p: Pressure field (boundary-zero)
        S: Source field
        gamma: Metabolic exponent, gamma >= 1

    Returns:
        NormSample with squared L2 norms of grad p, m.grad p, grad m, Laplacians,
        the L^{2 gamma} power integral, the max norm of m and the work term int pS

    Raises:
        ValidationError: if gamma < 1
    """
    if not gamma >= 1.0:
        raise ValidationError('gamma', f"gamma = {gamma} violates the hypothesis gamma >= 1")

    grid = p.grid
    m1, m2 = m.m1.values, m.m2.values
    sq = m1 ** 2 + m2 ** 2
    lap_m1 = _laplacian_arrays(m1, grid)
    lap_m2 = _laplacian_arrays(m2, grid)
    lap_p = _laplacian_arrays(p.values, grid)

    return NormSample(
        grad_p_l2sq=_dirichlet_arrays(p.values, p.values, grid),
        mgradp_l2sq=_anisotropic_arrays(m1, m2, p.values, p.values, grid),
        grad_m_l2sq=_dirichlet_arrays(m1, m1, grid) + _dirichlet_arrays(m2, m2, grid),
        m_l2gamma=_integrate_array(sq ** gamma, grid),
        lap_m_l2sq=_integrate_array(lap_m1 ** 2 + lap_m2 ** 2, grid),
        lap_p_l2sq=_integrate_array(lap_p ** 2, grid),
        m_linf=float(np.sqrt(np.max(sq))),
        m_l2sq=_integrate_array(sq, grid),
        grad_lap_p_l2sq=_grad_lap_proxy(p.values, grid),
        work_pS=_integrate_array(p.values * S.values, grid),
    )
