"""
Finite Element Space Module
Continuous Q_p spaces with Gauss-Lobatto nodal bases on the active cells of a level,
1D shape tables with derivatives up to order p, global DoF numbering and patch index sets
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, List

import numpy as np
import pandas as pd
from numpy.polynomial import Polynomial, legendre

from mesh_geometry import ActiveGeometry, MeshLevel, PatchKind

logger = logging.getLogger(__name__)

SUPPORTED_DEGREES = (1, 2, 3)


class DofError(ValueError):
    """Raised for unsupported element degrees and DoFs that no patch can reach"""


@lru_cache(maxsize=None)
def gauss_lobatto_nodes(p: int) -> np.ndarray:
    """
    Gauss-Lobatto nodes on [0, 1]: both end points plus the roots of P_p'

    Args:
        p: Polynomial degree

    Returns:
        Sorted array of p + 1 nodes
    """
    if p not in SUPPORTED_DEGREES:
        raise DofError(f"Degree {p} is not supported; choose one of {SUPPORTED_DEGREES}")
    inner = legendre.Legendre.basis(p).deriv().roots() if p > 1 else np.empty(0)
    nodes = np.concatenate([[0.0], (np.sort(inner.real) + 1.0) / 2.0, [1.0]])
    nodes.setflags(write=False)
    return nodes


@lru_cache(maxsize=None)
def _lagrange_polynomials(p: int) -> tuple:
    nodes = gauss_lobatto_nodes(p)
    basis = []
    for i, xi in enumerate(nodes):
        others = np.delete(nodes, i)
        poly = Polynomial.fromroots(others)
        basis.append(poly / poly(xi))
    return tuple(basis)


@dataclass(frozen=True)
class ShapeTable1D:
    """Values and derivatives of the p + 1 Lagrange basis functions at 1D points

    derivatives[k, q, i] is the k-th reference derivative of basis i at points[q].
    """
    degree: int
    nodes: np.ndarray
    points: np.ndarray
    derivatives: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return self.derivatives[0]

    @property
    def gradients(self) -> np.ndarray:
        return self.derivatives[1]


def build_shape_table(p: int, points: np.ndarray, max_derivative: int = 1) -> ShapeTable1D:
    """
    Tabulate the Gauss-Lobatto Lagrange basis on [0, 1]

    Args:
        p: Polynomial degree (1..3)
        points: Reference coordinates
        max_derivative: Highest derivative order (<= p)

    Returns:
        ShapeTable1D with derivatives of orders 0..max_derivative
    """
    if p not in SUPPORTED_DEGREES:
        raise DofError(f"Degree {p} is not supported; choose one of {SUPPORTED_DEGREES}")
    if not 0 <= max_derivative <= p:
        raise DofError(f"Derivative order {max_derivative} outside 0..{p}")

    points = np.asarray(points, dtype=float)
    basis = _lagrange_polynomials(p)
    table = np.empty((max_derivative + 1, len(points), p + 1))
    for i, poly in enumerate(basis):
        for k in range(max_derivative + 1):
            table[k, :, i] = poly.deriv(k)(points) if k else poly(points)
    return ShapeTable1D(degree=p, nodes=gauss_lobatto_nodes(p), points=points, derivatives=table)


def evaluate_basis(p: int, xi: np.ndarray, with_gradients: bool = True):
    """
    Tensor basis values (and reference gradients) at reference points of a cell

    Args:
        p: Degree
        xi: Reference coordinates, shape (n, 2)
        with_gradients: Also return d/dxi and d/deta

    Returns:
        values (n, (p+1)^2) and, if requested, grad_x, grad_y of the same shape;
        local index a + (p + 1) * b with a counting along x
    """
    xi = np.atleast_2d(xi)
    tx = build_shape_table(p, xi[:, 0], 1 if with_gradients else 0)
    ty = build_shape_table(p, xi[:, 1], 1 if with_gradients else 0)
    values = np.einsum('qb,qa->qba', ty.values, tx.values).reshape(len(xi), -1)
    if not with_gradients:
        return values
    grad_x = np.einsum('qb,qa->qba', ty.values, tx.gradients).reshape(len(xi), -1)
    grad_y = np.einsum('qb,qa->qba', ty.gradients, tx.values).reshape(len(xi), -1)
    return values, grad_x, grad_y


# ============================================================================
# DOF HANDLER
# ============================================================================

@dataclass
class DofHandler:
    """Global numbering of the Gauss-Lobatto lattice nodes carried by active cells

    Lattice node (I, J) of a level with n cells per side has index J * (n p + 1) + I;
    local node (a, b) of cell (i, j) is lattice node (i p + a, j p + b).
    """
    mesh: MeshLevel
    degree: int
    active_cells: np.ndarray
    cell_dofs: np.ndarray
    cell_row: np.ndarray
    lattice_to_dof: np.ndarray
    dof_to_lattice: np.ndarray
    node_points: np.ndarray
    constrained: np.ndarray

    @property
    def n_dofs(self) -> int:
        return len(self.dof_to_lattice)

    @property
    def lattice_width(self) -> int:
        return self.mesh.n * self.degree + 1

    @property
    def dofs_per_cell(self) -> int:
        return (self.degree + 1) ** 2

    @property
    def free_dofs(self) -> np.ndarray:
        return np.flatnonzero(~self.constrained)

    def lattice_dofs(self, I: np.ndarray, J: np.ndarray) -> np.ndarray:
        return self.lattice_to_dof[np.asarray(J) * self.lattice_width + np.asarray(I)]

    def dofs_of_cells(self, cells: np.ndarray) -> np.ndarray:
        rows = self.cell_row[np.asarray(cells)]
        if np.any(rows < 0):
            raise DofError(f"Cells {np.asarray(cells)[rows < 0][:5]} carry no DoFs on level {self.mesh.level}")
        return self.cell_dofs[rows]


def distribute_dofs(mesh: MeshLevel, active_cells: np.ndarray, p: int,
                    constrain_boundary: bool = False) -> DofHandler:
    """
    Number the lattice nodes of the active cells lexicographically

    Args:
        mesh: Level mesh
        active_cells: Sorted active cell indices
        p: Degree
        constrain_boundary: Mark nodes on the mesh box boundary as strongly constrained
            (fitted geometry)

    Returns:
        DofHandler
    """
    gauss_lobatto_nodes(p)
    width = mesh.n * p + 1
    active_cells = np.asarray(active_cells, dtype=np.int64)
    ci, cj = mesh.cell_ij(active_cells)

    a, b = np.meshgrid(np.arange(p + 1), np.arange(p + 1), indexing='xy')
    a, b = a.ravel(), b.ravel()
    lattice = (cj[:, None] * p + b[None, :]) * width + ci[:, None] * p + a[None, :]

    used = np.zeros(width * width, dtype=bool)
    used[lattice.ravel()] = True
    dof_to_lattice = np.flatnonzero(used)
    lattice_to_dof = np.full(width * width, -1, dtype=np.int64)
    lattice_to_dof[dof_to_lattice] = np.arange(len(dof_to_lattice))

    cell_row = np.full(mesh.n_cells, -1, dtype=np.int64)
    cell_row[active_cells] = np.arange(len(active_cells))

    nodes = gauss_lobatto_nodes(p)
    I, J = dof_to_lattice % width, dof_to_lattice // width
    node_points = np.column_stack([
        mesh.lower[0] + (I // p + nodes[I % p]) * mesh.h,
        mesh.lower[1] + (J // p + nodes[J % p]) * mesh.h,
    ])

    if constrain_boundary:
        constrained = (I == 0) | (I == width - 1) | (J == 0) | (J == width - 1)
    else:
        constrained = np.zeros(len(dof_to_lattice), dtype=bool)

    dofs = DofHandler(
        mesh=mesh,
        degree=p,
        active_cells=active_cells,
        cell_dofs=lattice_to_dof[lattice],
        cell_row=cell_row,
        lattice_to_dof=lattice_to_dof,
        dof_to_lattice=dof_to_lattice,
        node_points=node_points,
        constrained=constrained,
    )
    logger.info(f"Level {mesh.level}, Q{p}: {dofs.n_dofs} DoFs on {len(active_cells)} active cells"
                + (f" ({int(constrained.sum())} constrained)" if constrain_boundary else ""))
    return dofs


def build_patch_index_sets(dofs: DofHandler, geometry: ActiveGeometry) -> None:
    """
    Fill interior and extended DoF sets of every patch, then cover leftover DoFs

    Interior sets list the (2p-1)^2 lattice nodes strictly inside the 2x2 cell block
    (x fastest), extended sets the (2p+1)^2 nodes of the block. A free DoF interior
    to no patch is appended to the nearest cut patch (lowest index on ties).

    Raises:
        DofError: If uncovered DoFs exist but the level has no cut patch
    """
    p = dofs.degree
    inner = np.arange(-(p - 1), p)
    outer = np.arange(-p, p + 1)
    covered = np.zeros(dofs.n_dofs, dtype=bool)

    for patch in geometry.patches:
        ci, cj = patch.vertex[0] * p, patch.vertex[1] * p
        J, I = np.meshgrid(cj + inner, ci + inner, indexing='ij')
        interior = dofs.lattice_dofs(I.ravel(), J.ravel())
        J, I = np.meshgrid(cj + outer, ci + outer, indexing='ij')
        extended = dofs.lattice_dofs(I.ravel(), J.ravel())
        interior = interior[~dofs.constrained[interior]]
        patch.interior_dofs = interior
        patch.extended_dofs = extended
        patch.n_augmented = 0
        covered[interior] = True

    uncovered = np.flatnonzero(~covered & ~dofs.constrained)
    if len(uncovered) == 0:
        return

    cut_patches = [patch for patch in geometry.patches if patch.kind == PatchKind.CUT]
    if not cut_patches:
        raise DofError(f"{len(uncovered)} DoFs on level {dofs.mesh.level} lie in no patch "
                       f"and there is no cut patch to take them")

    vertices = np.array([patch.vertex for patch in cut_patches])
    anchors = dofs.mesh.vertex_point(vertices[:, 0], vertices[:, 1])
    offsets = dofs.node_points[uncovered][:, None, :] - anchors[None, :, :]
    nearest = np.argmin(np.einsum('dpk,dpk->dp', offsets, offsets), axis=1)

    for k, patch in enumerate(cut_patches):
        extra = uncovered[nearest == k]
        if len(extra) == 0:
            continue
        patch.interior_dofs = np.concatenate([patch.interior_dofs, extra])
        patch.extended_dofs = np.union1d(patch.extended_dofs, extra)
        patch.n_augmented = len(extra)

    logger.debug(f"Level {dofs.mesh.level}: {len(uncovered)} DoFs appended to "
                 f"{len(np.unique(nearest))} cut patches")


# ============================================================================
# FUNCTIONS ON THE SPACE
# ============================================================================

def interpolate(dofs: DofHandler, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
    """Nodal interpolant of a vectorized function f(x, y)"""
    values = fn(dofs.node_points[:, 0], dofs.node_points[:, 1])
    return np.broadcast_to(np.asarray(values, dtype=float), (dofs.n_dofs,)).copy()


def locate_points(dofs: DofHandler, points: np.ndarray):
    """
    Find the active cell and reference coordinates of physical points

    Returns:
        Tuple of (cells, reference coordinates)

    Raises:
        DofError: If a point lies in an inactive cell or outside the mesh box
    """
    mesh = dofs.mesh
    points = np.atleast_2d(points)
    scaled = (points - np.asarray(mesh.lower)) / mesh.h
    if np.any(scaled < 0) or np.any(scaled > mesh.n):
        raise DofError("Evaluation point outside the background mesh")
    ij = np.minimum(np.floor(scaled).astype(np.int64), mesh.n - 1)
    cells = mesh.cell_index(ij[:, 0], ij[:, 1])
    if np.any(dofs.cell_row[cells] < 0):
        raise DofError(f"Evaluation point in inactive cell on level {mesh.level}")
    return cells, scaled - ij


def evaluate_function(dofs: DofHandler, coefficients: np.ndarray, points: np.ndarray) -> np.ndarray:
    """
    Evaluate a finite element function at points of the active region

    Args:
        dofs: DoF handler of the function's level
        coefficients: Coefficient vector
        points: Physical points, shape (n, 2)

    Returns:
        Values at the points
    """
    cells, xi = locate_points(dofs, points)
    values = evaluate_basis(dofs.degree, xi, with_gradients=False)
    local = np.asarray(coefficients)[dofs.dofs_of_cells(cells)]
    return np.einsum('qi,qi->q', values, local)


def dof_count_frame(handlers: List[DofHandler], geometry_name: str) -> pd.DataFrame:
    """DoF counts per level and degree"""
    return pd.DataFrame([{
        'geometry': geometry_name,
        'level': d.mesh.level,
        'cells_per_side': d.mesh.n,
        'degree': d.degree,
        'active_cells': len(d.active_cells),
        'dofs': d.n_dofs,
        'constrained_dofs': int(d.constrained.sum()),
    } for d in handlers])
