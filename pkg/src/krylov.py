"""
Krylov Module
Full GMRES with right preconditioning, solve reports and fractional iteration counts
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import pandas as pd
import scipy.linalg as la

logger = logging.getLogger(__name__)

# ============================================================================
# CONSTANTS
# ============================================================================
DEFAULT_TOLERANCE = 1e-9
DEFAULT_MAX_ITERATIONS = 500
REORTHOGONALIZATION_THRESHOLD = 1e-3
FRACTIONAL_ORDERS = 8.0
DIVERGED_LABEL = '---'
UNCONVERGED_PREFIX = '>'

LinearMap = Callable[[np.ndarray], np.ndarray]


class KrylovError(ValueError):
    """Raised on Arnoldi breakdown with a nonzero residual and for undefined fractional counts"""


@dataclass
class SolveReport:
    """Outcome of one iterative solve"""
    method: str
    n_dofs: int
    n_it: int
    converged: bool
    residuals: List[float] = field(default_factory=list)
    wall_time: float = 0.0
    diverged: bool = False
    n_frac: Optional[float] = None
    final_residual: Optional[float] = None
    solution: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def reduction(self) -> float:
        if len(self.residuals) < 2 or self.residuals[0] == 0:
            return 0.0
        return self.residuals[-1] / self.residuals[0]

    @property
    def throughput(self) -> float:
        """DoFs solved per second of wall time"""
        return self.n_dofs / self.wall_time if self.wall_time > 0 else float('nan')

    def iteration_label(self, fractional: bool = False) -> str:
        """Table cell: n_it, n_frac to one decimal, '---' on divergence or '>n_it' at the iteration limit"""
        if self.diverged:
            return DIVERGED_LABEL
        if not self.converged:
            return f"{UNCONVERGED_PREFIX}{self.n_it}"
        if fractional:
            return f"{self.n_frac:.1f}" if self.n_frac is not None else f"{float(self.n_it):.1f}"
        return str(self.n_it)

    def to_row(self) -> dict:
        return {
            'method': self.method,
            'dofs': self.n_dofs,
            'n_it': self.n_it,
            'n_frac': self.n_frac,
            'converged': self.converged,
            'diverged': self.diverged,
            'reduction': self.reduction,
            'final_residual': self.final_residual,
            'wall_time_s': self.wall_time,
            'dofs_per_s': self.throughput,
        }

    def residual_frame(self) -> pd.DataFrame:
        r0 = self.residuals[0] if self.residuals and self.residuals[0] > 0 else 1.0
        return pd.DataFrame({
            'iteration': np.arange(len(self.residuals)),
            'residual': self.residuals,
            'relative_residual': np.asarray(self.residuals) / r0,
        })


def fractional_iterations(n_it: int, r_final: float, r_0: float) -> float:
    """
    Iteration count normalized to eight orders of residual reduction

    Args:
        n_it: Iterations performed
        r_final: Final residual norm
        r_0: Initial residual norm

    Returns:
        n_it * (-8) / log10(r_final / r_0)

    Raises:
        KrylovError: Unless 0 < r_final / r_0 < 1
    """
    if r_0 <= 0:
        raise KrylovError(f"Initial residual must be positive, got {r_0}")
    ratio = r_final / r_0
    if not 0.0 < ratio < 1.0:
        raise KrylovError(f"Fractional iterations need a residual reduction in (0, 1), got {ratio:.3e}")
    return n_it * (-FRACTIONAL_ORDERS) / np.log10(ratio)


def _givens(a: float, b: float):
    if b == 0.0:
        return 1.0, 0.0
    r = np.hypot(a, b)
    return a / r, b / r


def gmres_solve(apply: LinearMap, b: np.ndarray, precondition: Optional[LinearMap] = None,
                tol: float = DEFAULT_TOLERANCE, max_it: int = DEFAULT_MAX_ITERATIONS,
                method: str = 'gmres') -> SolveReport:
    """
    Full GMRES with right preconditioning from a zero initial guess

    Args:
        apply: Operator x -> A x
        b: Right-hand side
        precondition: Linear preconditioner r -> M r (identity if None)
        tol: Relative residual target
        max_it: Maximum number of Arnoldi steps
        method: Label stored in the report

    Returns:
        SolveReport; reaching max_it is reported through converged=False

    Raises:
        KrylovError: On Arnoldi breakdown before the tolerance is met
    """
    precondition = precondition or (lambda v: np.array(v, dtype=float))
    start = time.perf_counter()
    b = np.asarray(b, dtype=float)
    beta = float(np.linalg.norm(b))
    if beta == 0.0:
        return SolveReport(method=method, n_dofs=len(b), n_it=0, converged=True, residuals=[0.0],
                           final_residual=0.0, solution=np.zeros_like(b))

    basis = [b / beta]
    H = np.zeros((max_it + 1, max_it))
    g = np.zeros(max_it + 1)
    g[0] = beta
    cs, sn = np.zeros(max_it), np.zeros(max_it)
    residuals = [beta]
    n_it, converged = 0, False

    for j in range(max_it):
        w = apply(precondition(basis[j]))

        for i, v in enumerate(basis):
            H[i, j] = np.dot(v, w)
            w = w - H[i, j] * v
        norm = float(np.linalg.norm(w))
        if norm > 0.0 and np.max(np.abs([np.dot(v, w) / norm for v in basis])) > REORTHOGONALIZATION_THRESHOLD:
            for i, v in enumerate(basis):
                c = np.dot(v, w)
                H[i, j] += c
                w = w - c * v
            norm = float(np.linalg.norm(w))
        H[j + 1, j] = norm

        for i in range(j):
            hi, hk = H[i, j], H[i + 1, j]
            H[i, j] = cs[i] * hi + sn[i] * hk
            H[i + 1, j] = -sn[i] * hi + cs[i] * hk
        cs[j], sn[j] = _givens(H[j, j], H[j + 1, j])
        H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
        H[j + 1, j] = 0.0
        n_it = j + 1
        if H[j, j] == 0.0:
            raise KrylovError(f"Arnoldi breakdown at step {n_it}: the operator maps the Krylov space "
                              f"onto a lower-dimensional one")
        g[j + 1] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]

        residuals.append(abs(g[j + 1]))
        logger.debug(f"{method} iteration {n_it}: relative residual {residuals[-1] / beta:.3e}")
        if residuals[-1] <= tol * beta:
            converged = True
            break
        if norm <= np.finfo(float).eps * beta:
            raise KrylovError(f"Arnoldi breakdown at step {n_it} with relative residual "
                              f"{residuals[-1] / beta:.3e} above tolerance {tol:.1e}")
        basis.append(w / norm)

    y = la.solve_triangular(H[:n_it, :n_it], g[:n_it])
    x = precondition(np.column_stack(basis[:n_it]) @ y)
    wall_time = time.perf_counter() - start

    if not converged:
        logger.warning(f"{method} stopped after {max_it} iterations at relative residual "
                       f"{residuals[-1] / beta:.3e}")
    report = SolveReport(
        method=method,
        n_dofs=len(b),
        n_it=n_it,
        converged=converged,
        residuals=residuals,
        wall_time=wall_time,
        final_residual=float(np.linalg.norm(b - apply(x))),
        solution=x,
    )
    if 0.0 < residuals[-1] < beta:
        report.n_frac = fractional_iterations(n_it, residuals[-1], beta)
    return report
