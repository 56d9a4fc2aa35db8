"""
Anisotropic pressure problem -div[(I + m m^T) grad p] = S with p = 0 on the boundary
Sparse assembly over interior nodes, Jacobi-PCG and dense oracle solves
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from btnsim.config import settings
from btnsim.error_handlers import FieldError, ValidationError
from btnsim.grid import (
    Grid, ScalarField, VectorField2, anisotropic_form, boundary_values, dirichlet_form, integrate,
)
from btnsim.solvers import CGResult, pcg


logger = logging.getLogger(__name__)

# dense_pressure_operator evaluates O(n^2) bilinear forms
DENSE_ASSEMBLY_LIMIT = 1024


@dataclass(frozen=True, eq=False)
class PermeabilityField:
    """Per-node entries of the symmetric tensor I + m m^T."""
    a11: np.ndarray
    a12: np.ndarray
    a22: np.ndarray

    def trace(self) -> np.ndarray:
        return self.a11 + self.a22

    def determinant(self) -> np.ndarray:
        return self.a11 * self.a22 - self.a12 ** 2

    def min_eigenvalue(self) -> np.ndarray:
        half_gap = np.sqrt(0.25 * (self.a11 - self.a22) ** 2 + self.a12 ** 2)
        return 0.5 * self.trace() - half_gap

    def is_uniformly_elliptic(self) -> bool:
        """Eigenvalues >= 1 everywhere, via trace >= 2 and det >= 1 up to round-off."""
        scale = np.maximum(1.0, self.a11 * self.a22)
        eps = 8.0 * np.finfo(float).eps * scale
        return bool(np.all(self.trace() >= 2.0) and np.all(self.determinant() >= 1.0 - eps))


def permeability(m: VectorField2) -> PermeabilityField:
    m1, m2 = m.m1.values, m.m2.values
    return PermeabilityField(a11=1.0 + m1 ** 2, a12=m1 * m2, a22=1.0 + m2 ** 2)


# ===== ASSEMBLY =====

def _second_difference(n: int, h: float) -> sp.csr_matrix:
    # -d2/dx2 on the n interior points of a Dirichlet line
    main = np.full(n, 2.0)
    off = np.full(n - 1, -1.0)
    return (sp.diags([off, main, off], [-1, 0, 1], format='csr') / h ** 2).tocsr()


@lru_cache(maxsize=16)
def five_point_laplacian(grid: Grid) -> sp.csr_matrix:
    """
    Negative 5-point Laplacian on interior nodes, row-major over (nx-2, ny-2).

    SPD; x along the slow (major) index.
    """
    nxi, nyi = grid.nx - 2, grid.ny - 2
    Tx = _second_difference(nxi, grid.hx)
    Ty = _second_difference(nyi, grid.hy)
    L = sp.kron(Tx, sp.identity(nyi), format='csr') + sp.kron(sp.identity(nxi), Ty, format='csr')
    return L.tocsr()


def _forward_difference(n: int, h: float) -> sp.csr_matrix:
    # (n-1) x n, (u[k+1] - u[k]) / h
    return sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format='csr') / h


def _midpoint_average(n: int) -> sp.csr_matrix:
    return sp.diags([np.full(n - 1, 0.5), np.full(n - 1, 0.5)], [0, 1], shape=(n - 1, n), format='csr')


@lru_cache(maxsize=16)
def cell_gradient_operators(grid: Grid) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
    """
    Sparse cell-centre gradient (Gx, Gy) acting on all nodes.

    Row c = i*(ny-1) + j is the cell with lower-left node (i, j); matches
    the cell gradient used by anisotropic_form.
    """
    Gx = sp.kron(_forward_difference(grid.nx, grid.hx), _midpoint_average(grid.ny), format='csr')
    Gy = sp.kron(_midpoint_average(grid.nx), _forward_difference(grid.ny, grid.hy), format='csr')
    return Gx, Gy


def _corner_mean(a: np.ndarray) -> np.ndarray:
    return 0.25 * (a[:-1, :-1] + a[1:, :-1] + a[:-1, 1:] + a[1:, 1:])


def _require_boundary_zero(m: VectorField2) -> None:
    for component in (m.m1, m.m2):
        if np.any(boundary_values(component.values) != 0.0):
            raise FieldError("conductance field must vanish on the boundary")


def assemble_pressure_operator(m: VectorField2) -> sp.csr_matrix:
    """
    Assemble the SPD pressure matrix over interior nodes.

    Isotropic part is the 5-point flux form on grid edges. The anisotropic part
    uses, per cell, the tensor m m^T averaged from the cell's four corner nodes
    applied to the cell gradient, which gives a 9-point stencil. The matrix is
    the Hessian of dirichlet_form + anisotropic_form scaled by 1/(hx*hy), so the
    discrete weak-form identity holds with the same forms.

    Args:
        m: Boundary-zero conductance field

    Returns:
        Exactly symmetric CSR matrix of dimension (nx-2)(ny-2); equals the
        5-point Laplacian when m == 0
    """
    _require_boundary_zero(m)
    grid = m.grid
    m1, m2 = m.m1.values, m.m2.values

    t11 = _corner_mean(m1 * m1).ravel()
    t12 = _corner_mean(m1 * m2).ravel()
    t22 = _corner_mean(m2 * m2).ravel()

    Gx, Gy = cell_gradient_operators(grid)
    D11, D12, D22 = sp.diags(t11), sp.diags(t12), sp.diags(t22)
    B = Gx.T @ D11 @ Gx + Gx.T @ D12 @ Gy + Gy.T @ D12 @ Gx + Gy.T @ D22 @ Gy

    idx = grid.interior_index
    B_int = B.tocsr()[idx][:, idx]

    A = five_point_laplacian(grid) + B_int
    # exact symmetry: (a_ij + a_ji) * 0.5 is evaluated identically for both entries
    return ((A + A.T) * 0.5).tocsr()


def dense_pressure_operator(m: VectorField2) -> np.ndarray:
    """
    Dense re-assembly from the discrete bilinear forms on unit vectors.

    Independent of the sparse assembly; intended for small grids only.
    """
    grid = m.grid
    n = grid.n_interior
    if n > DENSE_ASSEMBLY_LIMIT:
        raise ValidationError('grid', f"dense re-assembly limited to {DENSE_ASSEMBLY_LIMIT} interior nodes, got {n}")

    basis = []
    for k in grid.interior_index:
        e = np.zeros(grid.n_nodes)
        e[k] = 1.0
        basis.append(ScalarField(grid, e.reshape(grid.shape), boundary_zero=True))

    area = grid.hx * grid.hy
    A = np.zeros((n, n))
    for a in range(n):
        for b in range(a, n):
            value = (dirichlet_form(basis[a], basis[b]) + anisotropic_form(m, basis[a], basis[b])) / area
            A[a, b] = value
            A[b, a] = value
    return A


# ===== SOLVES =====

def _rhs(S: ScalarField) -> np.ndarray:
    return np.ascontiguousarray(S.interior).ravel()


def solve_pressure_info(m: VectorField2, S: ScalarField, tol: float,
                        x0: Optional[ScalarField] = None,
                        operator: Optional[sp.csr_matrix] = None) -> Tuple[ScalarField, CGResult]:
    """
    Solve the pressure problem and return the CG diagnostics as well.

    Args:
        m: Boundary-zero conductance field
        S: Source field on the same grid
        tol: Relative residual tolerance
        x0: Optional warm start (previous pressure)
        operator: Pre-assembled operator for m, if available

    Returns:
        (p, CGResult) with p boundary-zero

    Raises:
        ConvergenceError: PCG failed within the iteration cap
    """
    if not tol > 0:
        raise ValidationError('cg_tol', f"tolerance must be positive, got {tol}")
    if S.grid != m.grid:
        raise FieldError("source and conductance live on different grids")

    grid = m.grid
    A = assemble_pressure_operator(m) if operator is None else operator
    guess = None if x0 is None else np.ascontiguousarray(x0.interior).ravel()

    result = pcg(A, _rhs(S), tol, x0=guess)
    p = ScalarField(grid, grid.embed_interior(result.x), boundary_zero=True)
    return p, result


def solve_pressure(m: VectorField2, S: ScalarField, tol: float,
                   x0: Optional[ScalarField] = None) -> ScalarField:
    """Pressure p for conductance m and source S, relative residual <= tol."""
    p, _ = solve_pressure_info(m, S, tol, x0=x0)
    return p


def solve_semi_trivial(S: ScalarField, tol: float) -> ScalarField:
    """Poisson solve -lap p = S, p = 0 on the boundary (the m == 0 pressure)."""
    return solve_pressure(VectorField2.zeros(S.grid), S, tol)


def solve_pressure_direct(m: VectorField2, S: ScalarField) -> ScalarField:
    """
    Dense Cholesky solve of the assembled system.

    Raises:
        ValidationError: interior size above BTN_DENSE_SOLVE_LIMIT
    """
    grid = m.grid
    if grid.n_interior > settings.DENSE_SOLVE_LIMIT:
        raise ValidationError(
            'grid', f"{grid.n_interior} unknowns exceed the dense solve limit {settings.DENSE_SOLVE_LIMIT}"
        )

    A = assemble_pressure_operator(m).toarray()
    factor = scipy.linalg.cho_factor(A)
    x = scipy.linalg.cho_solve(factor, _rhs(S))
    return ScalarField(grid, grid.embed_interior(x), boundary_zero=True)


def pressure_identity_residual(m: VectorField2, p: ScalarField, S: ScalarField) -> float:
    """
    Relative defect of the tested pressure equation.

    |int |grad p|^2 + int (m.grad p)^2 - int p S| / max(1, |int p S|), with the
    same discrete forms the assembly is built from.
    """
    work = integrate(p.with_values(p.values * S.values, boundary_zero=False))
    lhs = dirichlet_form(p) + anisotropic_form(m, p)
    return abs(lhs - work) / max(1.0, abs(work))
