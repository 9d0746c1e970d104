"""
Transfer Module
Prolongation by finite element embedding between consecutive levels and
restriction as its exact transpose
"""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from fe_space import DofHandler, build_shape_table, gauss_lobatto_nodes

logger = logging.getLogger(__name__)

ZERO_ENTRY_TOLERANCE = 1e-14


class TransferError(ValueError):
    """Raised when a fine active cell has no active parent or vectors have the wrong size"""


def embedding_1d(p: int) -> np.ndarray:
    """
    Coarse nodal basis evaluated at the fine nodes of both children

    Returns:
        Array E of shape (2, p + 1, p + 1) with E[c, a_fine, a_coarse] =
        phi_{a_coarse}((c + node_{a_fine}) / 2)
    """
    nodes = gauss_lobatto_nodes(p)
    E = np.stack([build_shape_table(p, (c + nodes) / 2.0, 0).values for c in (0, 1)])
    E[np.abs(E) < ZERO_ENTRY_TOLERANCE] = 0.0
    return E


@dataclass
class TransferPair:
    """Sparse prolongation P from level - 1 to level and its transpose"""
    level: int
    prolongation: sp.csr_matrix
    restriction: sp.csr_matrix

    @property
    def n_fine(self) -> int:
        return self.prolongation.shape[0]

    @property
    def n_coarse(self) -> int:
        return self.prolongation.shape[1]

    def prolongate(self, x_coarse: np.ndarray) -> np.ndarray:
        if np.shape(x_coarse) != (self.n_coarse,):
            raise TransferError(f"Coarse vector of shape {np.shape(x_coarse)} on level {self.level - 1} "
                                f"expected ({self.n_coarse},)")
        return self.prolongation @ x_coarse

    def restrict(self, r_fine: np.ndarray) -> np.ndarray:
        if np.shape(r_fine) != (self.n_fine,):
            raise TransferError(f"Fine vector of shape {np.shape(r_fine)} on level {self.level} "
                                f"expected ({self.n_fine},)")
        return self.restriction @ r_fine


def build_transfer(coarse: DofHandler, fine: DofHandler) -> TransferPair:
    """
    Assemble the embedding V_{l-1} -> V_l restricted to the fine active cells

    Each fine DoF takes its value from the last active fine cell (in cell order)
    containing it. Rows of constrained fine DoFs and columns of constrained coarse
    DoFs are dropped, so corrections never touch strongly imposed values.

    Args:
        coarse: DoF handler on level - 1
        fine: DoF handler on level

    Returns:
        TransferPair

    Raises:
        TransferError: If a fine active cell lies in an inactive coarse cell
    """
    p = fine.degree
    if coarse.degree != p:
        raise TransferError(f"Degree mismatch between levels: {coarse.degree} vs {p}")

    fine_mesh = fine.mesh
    parents = fine_mesh.parent(fine.active_cells)
    parent_rows = coarse.cell_row[parents]
    if np.any(parent_rows < 0):
        cell = int(fine.active_cells[np.argmax(parent_rows < 0)])
        raise TransferError(f"Active cell {cell} on level {fine_mesh.level} has an inactive parent")

    owner = np.full(fine.n_dofs, -1, dtype=np.int64)
    rows_of_cells = np.broadcast_to(np.arange(len(fine.active_cells))[:, None], fine.cell_dofs.shape)
    np.maximum.at(owner, fine.cell_dofs.ravel(), rows_of_cells.ravel())

    E = embedding_1d(p)
    cx, cy = fine_mesh.child_position(fine.active_cells)
    rows, cols, vals = [], [], []
    for px in (0, 1):
        for py in (0, 1):
            group = np.flatnonzero((cx == px) & (cy == py))
            if len(group) == 0:
                continue
            local = np.kron(E[py], E[px])
            fine_dofs = fine.cell_dofs[group]
            coarse_dofs = coarse.cell_dofs[parent_rows[group]]
            owned = owner[fine_dofs] == group[:, None]
            n_loc = local.shape[0]
            r = np.broadcast_to(fine_dofs[:, :, None], (len(group), n_loc, n_loc))
            c = np.broadcast_to(coarse_dofs[:, None, :], (len(group), n_loc, n_loc))
            v = np.broadcast_to(local[None], (len(group), n_loc, n_loc))
            keep = owned[:, :, None] & (v != 0.0)
            rows.append(r[keep])
            cols.append(c[keep])
            vals.append(v[keep])

    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    keep = ~fine.constrained[rows] & ~coarse.constrained[cols]
    P = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(fine.n_dofs, coarse.n_dofs))
    logger.debug(f"Transfer {fine_mesh.level - 1}->{fine_mesh.level}: {coarse.n_dofs} -> {fine.n_dofs} DoFs, "
                 f"{P.nnz} entries")
    return TransferPair(level=fine_mesh.level, prolongation=P, restriction=P.T.tocsr())
