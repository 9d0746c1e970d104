"""
Smoothers Module
Multiplicative vertex-patch smoother split into interior patches (fast diagonalization)
and cut patches (direct local solves), plus a Chebyshev baseline
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg as la

from level_operator import LevelOperator
from mesh_geometry import N_COLORS, ActiveGeometry
from parallel import map_items

logger = logging.getLogger(__name__)

# ============================================================================
# CONSTANTS
# ============================================================================
CHEBYSHEV_DEGREE = 5
CHEBYSHEV_RANGE = 20.0
CHEBYSHEV_UPPER_FACTOR = 1.1
POWER_ITERATIONS = 25
RANK_THRESHOLD = 1e-12
NULL_RESIDUAL_TOLERANCE = 1e-10
DEFAULT_CUT_SWEEPS = 2


class SmootherError(ValueError):
    """Raised for invalid smoother settings and operators a smoother cannot handle"""


@dataclass
class SmootherConfig:
    """Settings shared by both smoothers"""
    kind: str = 'mvs'
    n_c: int = DEFAULT_CUT_SWEEPS
    chebyshev_degree: int = CHEBYSHEV_DEGREE
    smoothing_range: float = CHEBYSHEV_RANGE
    upper_factor: float = CHEBYSHEV_UPPER_FACTOR
    power_iterations: int = POWER_ITERATIONS
    rank_threshold: float = RANK_THRESHOLD
    threads: int = 1

    def __post_init__(self):
        if self.kind not in ('mvs', 'chebyshev'):
            raise SmootherError(f"Unknown smoother '{self.kind}'")
        if self.n_c < 1:
            raise SmootherError(f"n_c must be at least 1, got {self.n_c}")
        if self.chebyshev_degree < 1:
            raise SmootherError(f"Chebyshev degree must be at least 1, got {self.chebyshev_degree}")
        if self.smoothing_range <= 1.0:
            raise SmootherError(f"Chebyshev range must exceed 1, got {self.smoothing_range}")


# ============================================================================
# PATCH SOLVERS
# ============================================================================

@dataclass
class CutPatchSolver:
    """Truncated-SVD inverse of one cut patch matrix"""
    patch_index: int
    dofs: np.ndarray
    inverse: np.ndarray
    rank: int
    null_basis: Optional[np.ndarray] = None
    local_matrix: Optional[np.ndarray] = None

    def solve(self, r_local: np.ndarray) -> Optional[np.ndarray]:
        """Local correction, or None when r has a component in the null space"""
        if self.null_basis is not None:
            leak = np.linalg.norm(self.null_basis.T @ r_local)
            if leak > NULL_RESIDUAL_TOLERANCE * max(np.linalg.norm(r_local), 1.0):
                logger.warning(f"Cut patch {self.patch_index} is singular (rank {self.rank}/{len(self.dofs)}) "
                               f"and the residual is not in its range; skipping it this sweep")
                return None
        return self.inverse @ r_local


def factorize_cut_patch(patch_index: int, dofs: np.ndarray, local: np.ndarray,
                        rank_threshold: float = RANK_THRESHOLD) -> CutPatchSolver:
    """
    Pseudo-inverse of a local matrix, truncated at rank_threshold * largest singular value

    Args:
        patch_index: Index of the patch in the level's patch list
        dofs: Interior DoF set of the patch
        local: Dense local matrix A[dofs, dofs]
        rank_threshold: Relative singular value cutoff

    Returns:
        CutPatchSolver
    """
    U, s, Vt = la.svd(local)
    rank = int(np.sum(s > rank_threshold * s[0])) if len(s) and s[0] > 0 else 0
    inverse = (Vt[:rank].T / s[:rank]) @ U[:, :rank].T
    null_basis = U[:, rank:] if rank < len(s) else None
    if null_basis is not None:
        logger.debug(f"Cut patch {patch_index}: rank {rank} of {len(s)}")
    return CutPatchSolver(patch_index=patch_index, dofs=dofs, inverse=inverse, rank=rank,
                          null_basis=null_basis, local_matrix=local)


@dataclass
class PatchSolverBank:
    """Fast-diagonalization data shared by all interior patches and one solver per cut patch"""
    degree: int
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    mass_1d: np.ndarray
    stiffness_1d: np.ndarray
    interior_index: List[np.ndarray]
    cut_solvers: List[List[CutPatchSolver]] = field(default_factory=list)

    @property
    def fiber_size(self) -> int:
        return 2 * self.degree - 1

    @property
    def n_interior(self) -> int:
        return sum(len(idx) for idx in self.interior_index)

    @property
    def n_cut(self) -> int:
        return sum(len(solvers) for solvers in self.cut_solvers)

    def interior_matrix(self) -> np.ndarray:
        """Cartesian patch matrix M (x) K + K (x) M on the interior lattice"""
        return np.kron(self.mass_1d, self.stiffness_1d) + np.kron(self.stiffness_1d, self.mass_1d)

    def solve_interior(self, residuals: np.ndarray) -> np.ndarray:
        """
        Fast diagonalization solve for a batch of interior patches

        Args:
            residuals: Array of shape (n, m, m) indexed [b, a], m = 2p - 1

        Returns:
            Corrections with the same shape
        """
        U = self.eigenvectors
        transformed = U.T @ residuals @ U
        transformed /= self.eigenvalues[:, None] + self.eigenvalues[None, :]
        return U @ transformed @ U.T

    def summary(self) -> dict:
        return {
            'interior_patches': self.n_interior,
            'cut_patches': self.n_cut,
            'rank_deficient_cut_patches': sum(1 for solvers in self.cut_solvers
                                              for s in solvers if s.null_basis is not None),
            'max_cut_patch_size': max((len(s.dofs) for solvers in self.cut_solvers for s in solvers),
                                      default=0),
        }


def patch_matrices_1d(operator: LevelOperator):
    """1D mass and stiffness on the interior nodes of two adjacent reference cells"""
    p = operator.degree
    M1, K1 = operator.mass_1d, operator.stiffness_1d
    M = np.zeros((2 * p + 1, 2 * p + 1))
    K = np.zeros_like(M)
    for offset in (0, p):
        M[offset:offset + p + 1, offset:offset + p + 1] += M1
        K[offset:offset + p + 1, offset:offset + p + 1] += K1
    return M[1:-1, 1:-1], K[1:-1, 1:-1]


def build_bank(operator: LevelOperator, geometry: ActiveGeometry,
               config: Optional[SmootherConfig] = None) -> PatchSolverBank:
    """
    Precompute the local solvers of one level

    Interior patches share one generalized eigendecomposition K U = M U diag(lambda)
    of the 1D patch matrices; ghost couplings on their boundary are ignored. Cut
    patches take their rows and columns of the assembled level matrix.

    Args:
        operator: Level operator (patch index sets must be filled)
        geometry: Level geometry with patches and colors
        config: Smoother settings

    Returns:
        PatchSolverBank
    """
    config = config or SmootherConfig()
    M, K = patch_matrices_1d(operator)
    eigenvalues, eigenvectors = la.eigh(K, M)

    interior_index = []
    for color in range(N_COLORS):
        members = [geometry.patches[k] for k in geometry.interior_colors[color]]
        if members:
            interior_index.append(np.stack([patch.interior_dofs for patch in members]))
        else:
            interior_index.append(np.empty((0, (2 * operator.degree - 1) ** 2), dtype=np.int64))

    A = operator.matrix if any(len(c) for c in geometry.cut_colors) else None

    def factorize(patch_index: int) -> CutPatchSolver:
        dofs = geometry.patches[patch_index].interior_dofs
        local = A[dofs][:, dofs].toarray()
        return factorize_cut_patch(patch_index, dofs, local, config.rank_threshold)

    cut_solvers = [map_items(factorize, [int(k) for k in geometry.cut_colors[color]], config.threads)
                   for color in range(N_COLORS)]

    bank = PatchSolverBank(
        degree=operator.degree,
        eigenvalues=eigenvalues,
        eigenvectors=eigenvectors,
        mass_1d=M,
        stiffness_1d=K,
        interior_index=interior_index,
        cut_solvers=cut_solvers,
    )
    logger.info(f"Level {geometry.mesh.level} patch bank: {bank.summary()}")
    return bank


# ============================================================================
# SMOOTHERS
# ============================================================================

class Smoother(ABC):
    """One smoothing step x' = S(x, b)"""

    @abstractmethod
    def step(self, x: np.ndarray, b: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def get_name(self) -> str:
        pass


class MultiplicativeVertexPatchSmoother(Smoother):
    """
    Colored multiplicative vertex-patch smoother

    Interior colors are swept once, then the cut colors n_c times. Each color
    evaluates the residual on the rows of its patches, from the cells and ghost
    faces touching them, and corrects all its patches from that snapshot.
    """

    def __init__(self, operator: LevelOperator, geometry: ActiveGeometry, bank: PatchSolverBank,
                 config: Optional[SmootherConfig] = None):
        self.operator = operator
        self.geometry = geometry
        self.bank = bank
        self.config = config or SmootherConfig()
        self._constrained = np.flatnonzero(operator.dofs.constrained)
        # Rows read by each color; the residual is evaluated on their cells only
        self._interior_supports = [operator.row_support(index.ravel()) if len(index) else None
                                   for index in bank.interior_index]
        self._cut_supports = [operator.row_support(np.concatenate([s.dofs for s in solvers])) if solvers else None
                              for solvers in bank.cut_solvers]

    def get_name(self) -> str:
        return f"MVS(n_c={self.config.n_c})"

    def interior_sweep(self, x: np.ndarray, b: np.ndarray) -> None:
        m = self.bank.fiber_size
        for index, support in zip(self.bank.interior_index, self._interior_supports):
            if support is None:
                continue
            r = self.operator.residual_rows(x, b, support)
            z = self.bank.solve_interior(r.reshape(-1, m, m))
            x[index] += z.reshape(len(index), -1)

    def cut_sweep(self, x: np.ndarray, b: np.ndarray) -> None:
        for solvers, support in zip(self.bank.cut_solvers, self._cut_supports):
            if support is None:
                continue
            r = np.zeros_like(x)
            r[support.rows] = self.operator.residual_rows(x, b, support)
            corrections = map_items(lambda s: s.solve(r[s.dofs]), solvers, self.config.threads)
            for solver, z in zip(solvers, corrections):
                if z is not None:
                    x[solver.dofs] += z

    def step(self, x: np.ndarray, b: np.ndarray) -> np.ndarray:
        """
        One smoothing step

        Args:
            x: Current iterate (not modified)
            b: Right-hand side

        Returns:
            Smoothed iterate
        """
        x = np.array(x, dtype=float)
        if len(self._constrained):
            x[self._constrained] = b[self._constrained]
        self.interior_sweep(x, b)
        for _ in range(self.config.n_c):
            self.cut_sweep(x, b)
        return x


class ChebyshevSmoother(Smoother):
    """
    Chebyshev semi-iteration on D^{-1} A over [lambda_max / range, upper_factor * lambda_max]
    """

    def __init__(self, apply: Callable[[np.ndarray], np.ndarray], diagonal: np.ndarray,
                 config: Optional[SmootherConfig] = None):
        """
        Initialize the smoother and estimate the largest eigenvalue

        Args:
            apply: Matrix-free operator
            diagonal: Operator diagonal
            config: Smoother settings

        Raises:
            SmootherError: If a diagonal entry is not positive
        """
        self.apply = apply
        self.config = config or SmootherConfig(kind='chebyshev')
        diagonal = np.asarray(diagonal, dtype=float)
        if np.any(diagonal <= 0):
            bad = int(np.argmax(diagonal <= 0))
            raise SmootherError(f"Nonpositive diagonal entry {diagonal[bad]:.3e} at DoF {bad}; "
                                f"the Nitsche penalty is too small for Jacobi scaling")
        self.inverse_diagonal = 1.0 / diagonal
        self.lambda_max = self.estimate_lambda_max()
        self.upper = self.config.upper_factor * self.lambda_max
        self.lower = self.lambda_max / self.config.smoothing_range
        logger.debug(f"Chebyshev interval [{self.lower:.4e}, {self.upper:.4e}]")

    @classmethod
    def from_operator(cls, operator: LevelOperator, config: Optional[SmootherConfig] = None):
        return cls(operator.apply, operator.diagonal(), config)

    def get_name(self) -> str:
        return f"Chebyshev({self.config.chebyshev_degree})"

    def estimate_lambda_max(self) -> float:
        """Power iteration on D^{-1} A from a fixed-seed random start"""
        rng = np.random.default_rng(0)
        v = rng.standard_normal(len(self.inverse_diagonal))
        v /= np.linalg.norm(v)
        estimate = 0.0
        for _ in range(self.config.power_iterations):
            w = self.inverse_diagonal * self.apply(v)
            estimate = float(np.linalg.norm(w))
            if estimate == 0.0:
                break
            v = w / estimate
        return estimate

    def step(self, x: np.ndarray, b: np.ndarray) -> np.ndarray:
        theta = (self.upper + self.lower) / 2.0
        delta = (self.upper - self.lower) / 2.0
        sigma = theta / delta
        rho = 1.0 / sigma

        x = np.array(x, dtype=float)
        d = self.inverse_diagonal * (b - self.apply(x)) / theta
        x += d
        for _ in range(1, self.config.chebyshev_degree):
            rho_next = 1.0 / (2.0 * sigma - rho)
            r = self.inverse_diagonal * (b - self.apply(x))
            d = rho_next * rho * d + (2.0 * rho_next / delta) * r
            x += d
            rho = rho_next
        return x


def build_smoother(operator: LevelOperator, geometry: ActiveGeometry,
                   config: Optional[SmootherConfig] = None) -> Smoother:
    """Create the configured smoother for one level"""
    config = config or SmootherConfig()
    if config.kind == 'chebyshev':
        return ChebyshevSmoother.from_operator(operator, config)
    return MultiplicativeVertexPatchSmoother(operator, geometry, build_bank(operator, geometry, config), config)
