"""
Mesh Geometry Module
Nested Cartesian level meshes, exact cell classification against the level set,
ghost faces, vertex patches and their coloring
"""
import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import List, Tuple

import numpy as np
import pandas as pd

from level_sets import CellKind, GeometryError, LevelSet

logger = logging.getLogger(__name__)

N_COLORS = 4
SQUARE_TOLERANCE = 1e-12


class PatchKind(IntEnum):
    """Interior patches have only inside cells; cut patches touch the boundary"""
    INTERIOR = 0
    CUT = 1


@dataclass(frozen=True)
class MeshLevel:
    """One uniform Cartesian level; cell (i, j) has index j * n + i"""
    level: int
    lower: Tuple[float, float]
    n: int
    h: float

    @property
    def n_cells(self) -> int:
        return self.n * self.n

    @property
    def n_vertices(self) -> int:
        return (self.n + 1) ** 2

    def cell_ij(self, cells: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        cells = np.asarray(cells)
        return cells % self.n, cells // self.n

    def cell_index(self, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        return np.asarray(j) * self.n + np.asarray(i)

    def cell_lower(self, cells: np.ndarray) -> np.ndarray:
        i, j = self.cell_ij(cells)
        return np.column_stack([self.lower[0] + i * self.h, self.lower[1] + j * self.h])

    def cell_upper(self, cells: np.ndarray) -> np.ndarray:
        return self.cell_lower(cells) + self.h

    def vertex_point(self, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        return np.column_stack([self.lower[0] + np.asarray(i) * self.h,
                                self.lower[1] + np.asarray(j) * self.h])

    def parent(self, cells: np.ndarray) -> np.ndarray:
        """Index of the containing cell on level - 1"""
        i, j = self.cell_ij(cells)
        return (j // 2) * (self.n // 2) + i // 2

    def child_position(self, cells: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Position (0/1, 0/1) of each cell inside its parent"""
        i, j = self.cell_ij(cells)
        return i % 2, j % 2

    def children(self, cell: int) -> np.ndarray:
        """Indices of the four cells on level + 1 covering the given cell"""
        i, j = cell % self.n, cell // self.n
        fine_n = 2 * self.n
        return np.array([(2 * j + b) * fine_n + 2 * i + a for b in (0, 1) for a in (0, 1)])

    def neighbor(self, cell: int, axis: int, side: int) -> int:
        """Face neighbor across the given axis (side -1 or +1); -1 on the mesh boundary"""
        i, j = cell % self.n, cell // self.n
        if axis == 0:
            i += side
        else:
            j += side
        if 0 <= i < self.n and 0 <= j < self.n:
            return j * self.n + i
        return -1


@dataclass(frozen=True)
class MeshHierarchy:
    """Nested meshes M_0 (2x2 cells) through M_L over a square box"""
    domain_box: Tuple[Tuple[float, float], Tuple[float, float]]
    levels: Tuple[MeshLevel, ...]

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def h(self, level: int) -> float:
        return self.levels[level].h

    def cells_per_side(self, level: int) -> int:
        return self.levels[level].n


@dataclass(frozen=True)
class GhostFaces:
    """Faces between two active cells with at least one cut neighbor

    The face normal points from the minus cell to the plus cell along `axis`.
    """
    minus: np.ndarray
    plus: np.ndarray
    axis: np.ndarray

    def __len__(self) -> int:
        return len(self.minus)


@dataclass
class PatchDescriptor:
    """Vertex patch: the four cells sharing an interior mesh vertex"""
    index: int
    vertex: Tuple[int, int]
    cells: Tuple[int, int, int, int]
    kind: PatchKind
    color: int
    interior_dofs: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    extended_dofs: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    n_augmented: int = 0


@dataclass
class ActiveGeometry:
    """Per-level classification, ghost faces and vertex patches"""
    mesh: MeshLevel
    level_set: LevelSet
    kinds: np.ndarray
    active_cells: np.ndarray
    cut_cells: np.ndarray
    inside_cells: np.ndarray
    ghost_faces: GhostFaces
    patches: List[PatchDescriptor]
    interior_colors: List[np.ndarray]
    cut_colors: List[np.ndarray]

    @property
    def is_fitted(self) -> bool:
        return self.level_set.fitted

    def patch_indices(self, kind: PatchKind) -> np.ndarray:
        return np.array([p.index for p in self.patches if p.kind == kind], dtype=np.int64)

    def summary(self) -> dict:
        n_cut_patches = sum(1 for p in self.patches if p.kind == PatchKind.CUT)
        return {
            'level': self.mesh.level,
            'cells_per_side': self.mesh.n,
            'inside_cells': len(self.inside_cells),
            'cut_cells': len(self.cut_cells),
            'active_cells': len(self.active_cells),
            'ghost_faces': len(self.ghost_faces),
            'interior_patches': len(self.patches) - n_cut_patches,
            'cut_patches': n_cut_patches,
        }


# ============================================================================
# CONSTRUCTION
# ============================================================================

def build_hierarchy(domain_box: Tuple[Tuple[float, float], Tuple[float, float]],
                    n_refinements: int) -> MeshHierarchy:
    """
    Build the nested level meshes by repeated bisection of a 2x2 coarse mesh

    Args:
        domain_box: ((x0, y0), (x1, y1)) corners of the square background box
        n_refinements: Finest level L (levels 0..L are created)

    Returns:
        MeshHierarchy with cells_per_side(l) = 2^(l+1)
    """
    if n_refinements < 0:
        raise GeometryError(f"Number of refinements must be >= 0, got {n_refinements}")
    (x0, y0), (x1, y1) = domain_box
    width, height = x1 - x0, y1 - y0
    if width <= 0 or abs(width - height) > SQUARE_TOLERANCE * width:
        raise GeometryError(f"Background box must be a square, got {width} x {height}")

    levels = []
    for level in range(n_refinements + 1):
        n = 2 ** (level + 1)
        levels.append(MeshLevel(level=level, lower=(float(x0), float(y0)), n=n, h=width / n))
    return MeshHierarchy(domain_box=((float(x0), float(y0)), (float(x1), float(y1))),
                         levels=tuple(levels))


def classify_cells(mesh: MeshLevel, level_set: LevelSet) -> np.ndarray:
    """
    Classify every cell as inside, cut or outside

    Args:
        mesh: Level mesh
        level_set: Analytic level set description

    Returns:
        Array of CellKind codes indexed by cell
    """
    if not isinstance(level_set, LevelSet):
        raise GeometryError("Only analytic level sets with exact box classification are supported")
    cells = np.arange(mesh.n_cells)
    return level_set.classify_boxes(mesh.cell_lower(cells), mesh.cell_upper(cells))


def collect_ghost_faces(mesh: MeshLevel, kinds: np.ndarray) -> GhostFaces:
    """
    List every interior face between two active cells of which at least one is cut

    Args:
        mesh: Level mesh
        kinds: Cell classification

    Returns:
        GhostFaces with each face listed once, x-normal faces first
    """
    n = mesh.n
    grid = kinds.reshape(n, n)  # [j, i]
    active = grid != CellKind.OUTSIDE
    cut = grid == CellKind.CUT

    mask_x = active[:, :-1] & active[:, 1:] & (cut[:, :-1] | cut[:, 1:])
    jj, ii = np.nonzero(mask_x)
    minus_x = jj * n + ii

    mask_y = active[:-1, :] & active[1:, :] & (cut[:-1, :] | cut[1:, :])
    jj, ii = np.nonzero(mask_y)
    minus_y = jj * n + ii

    return GhostFaces(
        minus=np.concatenate([minus_x, minus_y]).astype(np.int64),
        plus=np.concatenate([minus_x + 1, minus_y + n]).astype(np.int64),
        axis=np.concatenate([np.zeros(len(minus_x), dtype=np.int8),
                             np.ones(len(minus_y), dtype=np.int8)]),
    )


def build_patches(mesh: MeshLevel, kinds: np.ndarray,
                  level_set: LevelSet) -> Tuple[List[PatchDescriptor], List[np.ndarray], List[np.ndarray]]:
    """
    Create one patch per interior mesh vertex strictly inside the domain and color them

    Args:
        mesh: Level mesh
        kinds: Cell classification
        level_set: Level set used for the vertex test

    Returns:
        Tuple of (patches, interior color lists, cut color lists); color c holds the
        patches whose vertex lattice coordinates have parities (c % 2, c // 2)
    """
    n = mesh.n
    vj, vi = np.meshgrid(np.arange(1, n), np.arange(1, n), indexing='ij')
    vi, vj = vi.ravel(), vj.ravel()
    inside = level_set.evaluate(mesh.vertex_point(vi, vj)) < 0.0
    vi, vj = vi[inside], vj[inside]

    cells = np.column_stack([
        (vj - 1) * n + vi - 1,
        (vj - 1) * n + vi,
        vj * n + vi - 1,
        vj * n + vi,
    ])
    cell_kinds = kinds[cells]
    if np.any(cell_kinds == CellKind.OUTSIDE):
        bad = int(np.argmax(np.any(cell_kinds == CellKind.OUTSIDE, axis=1)))
        raise GeometryError(
            f"Vertex ({vi[bad]}, {vj[bad]}) on level {mesh.level} lies inside the domain "
            f"but touches an inactive cell; the classification is inconsistent"
        )

    is_cut = np.any(cell_kinds == CellKind.CUT, axis=1)
    colors = (vi % 2) + 2 * (vj % 2)

    patches = [
        PatchDescriptor(
            index=k,
            vertex=(int(vi[k]), int(vj[k])),
            cells=tuple(int(c) for c in cells[k]),
            kind=PatchKind.CUT if is_cut[k] else PatchKind.INTERIOR,
            color=int(colors[k]),
        )
        for k in range(len(vi))
    ]

    interior_colors = [np.flatnonzero(~is_cut & (colors == c)) for c in range(N_COLORS)]
    cut_colors = [np.flatnonzero(is_cut & (colors == c)) for c in range(N_COLORS)]
    return patches, interior_colors, cut_colors


def build_active_geometry(mesh: MeshLevel, level_set: LevelSet) -> ActiveGeometry:
    """
    Run classification, ghost-face collection and patch construction for one level

    Args:
        mesh: Level mesh
        level_set: Domain description

    Returns:
        Immutable-by-convention ActiveGeometry
    """
    kinds = classify_cells(mesh, level_set)
    active = np.flatnonzero(kinds != CellKind.OUTSIDE)
    if len(active) == 0:
        raise GeometryError(f"No active cells on level {mesh.level}; the domain misses the mesh box")

    patches, interior_colors, cut_colors = build_patches(mesh, kinds, level_set)
    geometry = ActiveGeometry(
        mesh=mesh,
        level_set=level_set,
        kinds=kinds,
        active_cells=active,
        cut_cells=np.flatnonzero(kinds == CellKind.CUT),
        inside_cells=np.flatnonzero(kinds == CellKind.INSIDE),
        ghost_faces=collect_ghost_faces(mesh, kinds),
        patches=patches,
        interior_colors=interior_colors,
        cut_colors=cut_colors,
    )
    logger.info(f"Level {mesh.level} geometry: {geometry.summary()}")
    return geometry


def check_nestedness(coarse: ActiveGeometry, fine: ActiveGeometry) -> None:
    """
    Assert that every fine active cell lies in an active coarse cell

    Raises:
        GeometryError: If the fine active region is not contained in the coarse one
    """
    parents = fine.mesh.parent(fine.active_cells)
    orphaned = coarse.kinds[parents] == CellKind.OUTSIDE
    if np.any(orphaned):
        cell = int(fine.active_cells[np.argmax(orphaned)])
        raise GeometryError(
            f"Active cell {cell} on level {fine.mesh.level} has an inactive parent; "
            f"the active domain grows under refinement"
        )


def geometry_summary_frame(geometries: List[ActiveGeometry]) -> pd.DataFrame:
    """Per-level counts of cells, ghost faces and patches"""
    return pd.DataFrame([g.summary() for g in geometries])
