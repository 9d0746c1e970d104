"""
Multigrid Module
Level setup with caching, V-cycle with one pre- and post-smoothing step,
exact coarse solve, and the V-cycle used as solver or GMRES preconditioner
"""
import logging
import time
from dataclasses import dataclass
from typing import ClassVar, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la

from fe_space import DofHandler, build_patch_index_sets, distribute_dofs
from krylov import DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE, SolveReport, fractional_iterations, gmres_solve
from level_operator import LevelOperator
from level_sets import LevelSet
from mesh_geometry import ActiveGeometry, MeshLevel, build_active_geometry, build_hierarchy, check_nestedness
from quadrature import CutQuadrature, build_cut_quadrature
from smoothers import Smoother, SmootherConfig, build_smoother
from transfer import TransferPair, build_transfer

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 10.0

Box = Tuple[Tuple[float, float], Tuple[float, float]]


@dataclass
class LevelSetup:
    """Parameter-independent data of one level: geometry, DoFs and cut rules"""
    geometry: ActiveGeometry
    dofs: DofHandler
    quadrature: CutQuadrature


class LevelSetupCache:
    """Reuses level setups across the runs of a table"""

    _cache: ClassVar[Dict[tuple, LevelSetup]] = {}

    @classmethod
    def _key(cls, level_set: LevelSet, mesh: MeshLevel, degree: int) -> tuple:
        return (level_set.cache_key(), mesh.lower, mesh.n, mesh.h, degree)

    @classmethod
    def get(cls, level_set: LevelSet, mesh: MeshLevel, degree: int, threads: int = 1) -> LevelSetup:
        key = cls._key(level_set, mesh, degree)
        if key in cls._cache:
            return cls._cache[key]

        geometry = build_active_geometry(mesh, level_set)
        dofs = distribute_dofs(mesh, geometry.active_cells, degree, constrain_boundary=level_set.fitted)
        build_patch_index_sets(dofs, geometry)
        quadrature = build_cut_quadrature(geometry, degree + 1, threads)
        setup = LevelSetup(geometry=geometry, dofs=dofs, quadrature=quadrature)
        cls._cache[key] = setup
        return setup

    @classmethod
    def clear(cls):
        cls._cache.clear()

    @classmethod
    def size(cls) -> int:
        return len(cls._cache)


@dataclass
class MgLevel:
    """Everything the V-cycle needs on one level"""
    level: int
    setup: LevelSetup
    operator: LevelOperator
    smoother: Optional[Smoother] = None
    transfer: Optional[TransferPair] = None

    @property
    def n_dofs(self) -> int:
        return self.operator.n_dofs


class MgHierarchy:
    """Level operators, smoothers and transfers from level 0 to the finest level"""

    def __init__(self, levels: List[MgLevel]):
        self.levels = levels
        coarse = levels[0].operator.assemble_dense()
        self._coarse_lu = la.lu_factor(coarse)
        logger.info(f"Coarse solver: dense LU of {coarse.shape[0]} DoFs")

    @property
    def finest(self) -> MgLevel:
        return self.levels[-1]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def coarse_solve(self, b: np.ndarray) -> np.ndarray:
        return la.lu_solve(self._coarse_lu, b)

    def v_cycle(self, level: int, x: np.ndarray, b: np.ndarray) -> np.ndarray:
        """
        One V-cycle on the given level

        Args:
            level: Level index (0 solves exactly)
            x: Initial iterate
            b: Right-hand side

        Returns:
            New iterate
        """
        if level == 0:
            return self.coarse_solve(b)
        data = self.levels[level]
        x = data.smoother.step(x, b)
        r = b - data.operator.apply(x)
        correction = self.v_cycle(level - 1, np.zeros(self.levels[level - 1].n_dofs), data.transfer.restrict(r))
        x = x + data.transfer.prolongate(correction)
        return data.smoother.step(x, b)

    def precondition(self, r: np.ndarray) -> np.ndarray:
        """V-cycle applied to r from a zero initial guess (a fixed linear map)"""
        return self.v_cycle(self.n_levels - 1, np.zeros_like(r), r)

    def solve_vcycle(self, b: np.ndarray, tol: float = DEFAULT_TOLERANCE,
                     max_it: int = DEFAULT_MAX_ITERATIONS) -> SolveReport:
        """
        Stationary iteration x <- x + V(b - A x) from x = 0

        Divergence (residual above 10 times the initial one, or not finite) ends the
        iteration and is reported, not raised.
        """
        operator = self.finest.operator
        start = time.perf_counter()
        x = np.zeros_like(b, dtype=float)
        r0 = float(np.linalg.norm(b))
        residuals = [r0]
        converged, diverged = r0 <= tol * r0, False
        n_it = 0
        while not converged and n_it < max_it:
            x = x + self.precondition(b - operator.apply(x))
            n_it += 1
            residuals.append(float(np.linalg.norm(b - operator.apply(x))))
            logger.debug(f"V-cycle iteration {n_it}: relative residual {residuals[-1] / r0:.3e}")
            if not np.isfinite(residuals[-1]) or residuals[-1] > DIVERGENCE_FACTOR * r0:
                diverged = True
                logger.warning(f"V-cycle diverged after {n_it} iterations "
                               f"(relative residual {residuals[-1] / r0:.3e})")
                break
            converged = residuals[-1] <= tol * r0

        if not converged and not diverged:
            logger.warning(f"V-cycle stopped after {max_it} iterations at relative residual "
                           f"{residuals[-1] / r0:.3e}")
        report = SolveReport(
            method='vcycle',
            n_dofs=len(b),
            n_it=n_it,
            converged=converged,
            diverged=diverged,
            residuals=residuals,
            wall_time=time.perf_counter() - start,
            final_residual=residuals[-1],
            solution=x,
        )
        if converged and 0.0 < residuals[-1] < r0:
            report.n_frac = fractional_iterations(n_it, residuals[-1], r0)
        return report

    def solve_gmres(self, b: np.ndarray, tol: float = DEFAULT_TOLERANCE,
                    max_it: int = DEFAULT_MAX_ITERATIONS) -> SolveReport:
        """GMRES on the finest level preconditioned by one V-cycle"""
        return gmres_solve(self.finest.operator.apply, b, self.precondition, tol=tol, max_it=max_it,
                           method='gmres+mg')


def build_multigrid(level_set: LevelSet, domain_box: Box, finest_level: int, degree: int,
                    smoother_config: Optional[SmootherConfig] = None, gamma_d: Optional[float] = None,
                    gamma_ghost: Optional[Sequence[float]] = None, threads: int = 1,
                    allow_indefinite: bool = False) -> MgHierarchy:
    """
    Set up all levels of the hierarchy

    Args:
        level_set: Domain description
        domain_box: Square background box
        finest_level: Finest level L
        degree: Polynomial degree p
        smoother_config: Smoother settings
        gamma_d: Nitsche penalty (None for 5 p^2)
        gamma_ghost: Ghost coefficients for k = 1..p
        threads: Worker count
        allow_indefinite: Forwarded to LevelOperator

    Returns:
        MgHierarchy
    """
    smoother_config = smoother_config or SmootherConfig(threads=threads)
    mesh_hierarchy = build_hierarchy(domain_box, finest_level)
    start = time.perf_counter()

    levels: List[MgLevel] = []
    for mesh in mesh_hierarchy.levels:
        setup = LevelSetupCache.get(level_set, mesh, degree, threads)
        operator = LevelOperator(setup.geometry, setup.dofs, setup.quadrature, gamma_d=gamma_d,
                                 gamma_ghost=gamma_ghost, threads=threads, allow_indefinite=allow_indefinite)
        level = MgLevel(level=mesh.level, setup=setup, operator=operator)
        if levels:
            check_nestedness(levels[-1].setup.geometry, setup.geometry)
            level.transfer = build_transfer(levels[-1].setup.dofs, setup.dofs)
            level.smoother = build_smoother(operator, setup.geometry, smoother_config)
        levels.append(level)

    hierarchy = MgHierarchy(levels)
    logger.info(f"Multigrid setup for {level_set.get_name()} Q{degree}, levels 0..{finest_level}: "
                f"{hierarchy.finest.n_dofs} finest DoFs in {time.perf_counter() - start:.2f} s")
    return hierarchy
