"""
Jacobi-preconditioned conjugate gradients
Shared by the pressure solve and the implicit diffusion solve
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp

from btnsim.config import settings
from btnsim.error_handlers import ConvergenceError


logger = logging.getLogger(__name__)


@dataclass
class CGResult:
    """Outcome of one PCG solve."""
    x: np.ndarray
    iterations: int
    converged: bool
    residual_history: List[float] = field(default_factory=list)

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else 0.0


def iteration_cap(n: int) -> int:
    """Iteration cap factor * sqrt(N) for an N-unknown system."""
    return max(1, int(math.ceil(settings.CG_ITERATION_FACTOR * math.sqrt(n))))


def pcg(A: sp.spmatrix, b: np.ndarray, tol: float, x0: Optional[np.ndarray] = None,
        maxiter: Optional[int] = None, raise_on_failure: bool = True) -> CGResult:
    """
    Solve A x = b for symmetric positive definite A.

    Stops when the relative residual ||b - A x|| / ||b|| is at most tol. The
    recursively updated residual is confirmed against the true residual before
    returning, so warm starts and long solves cannot report drifted residuals.

    Args:
        A: SPD sparse matrix (CSR)
        b: Right-hand side
        tol: Relative residual tolerance, > 0
        x0: Optional initial guess (warm start)
        maxiter: Iteration cap; defaults to iteration_cap(N)
        raise_on_failure: Raise ConvergenceError instead of returning converged=False

    Returns:
        CGResult with solution, iteration count and relative residual history

    Raises:
        ConvergenceError: cap reached or non-positive curvature (A not SPD)
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")

    n = b.shape[0]
    maxiter = iteration_cap(n) if maxiter is None else maxiter
    b_norm = float(np.linalg.norm(b))

    if b_norm == 0.0:
        return CGResult(x=np.zeros(n), iterations=0, converged=True, residual_history=[0.0])

    inv_diag = 1.0 / A.diagonal()
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - A @ x if x0 is not None else b.copy()
    history = [float(np.linalg.norm(r)) / b_norm]

    if history[-1] <= tol:
        return CGResult(x=x, iterations=0, converged=True, residual_history=history)

    z = inv_diag * r
    d = z.copy()
    rz = float(r @ z)
    k = 0

    while k < maxiter:
        Ad = A @ d
        curvature = float(d @ Ad)
        if curvature <= 0.0:
            raise ConvergenceError(
                f"non-positive curvature {curvature:.3e} at iteration {k}; operator is not SPD",
                history,
            )

        alpha = rz / curvature
        x += alpha * d
        r -= alpha * Ad
        k += 1
        history.append(float(np.linalg.norm(r)) / b_norm)

        if history[-1] <= tol:
            # Confirm with the true residual; restart from it if it drifted
            r = b - A @ x
            true_rel = float(np.linalg.norm(r)) / b_norm
            history[-1] = true_rel
            if true_rel <= tol:
                logger.debug(f"PCG converged: n={n}, iterations={k}, residual={true_rel:.3e}")
                return CGResult(x=x, iterations=k, converged=True, residual_history=history)
            z = inv_diag * r
            d = z.copy()
            rz = float(r @ z)
            continue

        z = inv_diag * r
        rz_new = float(r @ z)
        beta = rz_new / rz
        d = z + beta * d
        rz = rz_new

    message = f"PCG did not reach tol={tol:.1e} in {maxiter} iterations (residual {history[-1]:.3e}, n={n})"
    if raise_on_failure:
        raise ConvergenceError(message, history)

    logger.warning(message)
    return CGResult(x=x, iterations=k, converged=False, residual_history=history)
