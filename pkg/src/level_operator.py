"""
Level Operator Module
Matrix-free application of the Nitsche form with ghost penalty on one level,
right-hand side assembly and assembled matrices for setup and validation
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from math import factorial
from typing import Callable, Dict, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from fe_space import DofHandler, build_shape_table, evaluate_basis
from mesh_geometry import ActiveGeometry
from parallel import map_chunks
from quadrature import CutQuadrature, gauss_legendre_01

logger = logging.getLogger(__name__)

# ============================================================================
# CONSTANTS
# ============================================================================
DEFAULT_GHOST_GAMMA = 0.08
NITSCHE_SCALE = 5.0
DENSE_SIZE_LIMIT = 50000

Function2D = Callable[[np.ndarray, np.ndarray], np.ndarray]


class OperatorError(ValueError):
    """Raised for invalid parameters, dimension mismatches and oversized dense requests"""


def default_nitsche_penalty(p: int) -> float:
    return NITSCHE_SCALE * p * p


def _pad(arrays, width: int, trailing: tuple = ()) -> np.ndarray:
    out = np.zeros((len(arrays), width) + trailing)
    for k, a in enumerate(arrays):
        out[k, :len(a)] = a
    return out


@dataclass(frozen=True)
class RowSupport:
    """Inside cells, cut cells and ghost faces whose DoFs meet a set of rows

    Indices refer to the operator's own cell and face tables.
    """
    rows: np.ndarray
    inside: np.ndarray
    cut: np.ndarray
    ghost: Dict[int, np.ndarray]

    @property
    def n_cells(self) -> int:
        return len(self.inside) + len(self.cut)


class LevelOperator:
    """
    A_l = a_l + g_l on the DoFs of one level

    Inside cells are evaluated by sum factorization with 1D tables; cut cells use
    basis values tabulated at their cut quadrature points; ghost faces apply the
    jumps of normal derivatives of orders 1..p.
    """

    def __init__(self, geometry: ActiveGeometry, dofs: DofHandler, quadrature: CutQuadrature,
                 gamma_d: Optional[float] = None, gamma_ghost: Optional[Sequence[float]] = None,
                 threads: int = 1, allow_indefinite: bool = False):
        """
        Initialize the operator and precompute all tables

        Args:
            geometry: Level geometry
            dofs: DoF handler of the level
            quadrature: Cut-cell rules aligned with geometry.cut_cells
            gamma_d: Nitsche penalty (defaults to 5 p^2)
            gamma_ghost: Ghost penalty coefficients for k = 1..p (defaults to 0.08 each)
            threads: Worker count for cell loops
            allow_indefinite: Accept gamma_d <= 0 (used to exercise failing checks)
        """
        p = dofs.degree
        self.geometry = geometry
        self.dofs = dofs
        self.quadrature = quadrature
        self.degree = p
        self.h = geometry.mesh.h
        self.threads = threads
        self.gamma_d = default_nitsche_penalty(p) if gamma_d is None else float(gamma_d)
        if gamma_ghost is None:
            gamma_ghost = [DEFAULT_GHOST_GAMMA] * p
        if len(gamma_ghost) < p:
            raise OperatorError(f"Need {p} ghost penalty coefficients, got {len(gamma_ghost)}")
        self.gamma_ghost = np.asarray(gamma_ghost[:p], dtype=float)

        if self.gamma_d <= 0 and not allow_indefinite:
            raise OperatorError(f"Nitsche penalty must be positive, got {self.gamma_d}")
        if np.any(self.gamma_ghost < 0):
            raise OperatorError(f"Ghost penalty coefficients must be nonnegative, got {self.gamma_ghost}")

        self.n_dofs = dofs.n_dofs
        self._constrained = np.flatnonzero(dofs.constrained)

        self._setup_inside()
        self._setup_cut()
        self._setup_ghost()
        logger.info(f"Level {geometry.mesh.level} operator: {self.n_dofs} DoFs, "
                    f"{len(self._inside_dofs)} inside / {len(self._cut_dofs)} cut cells, "
                    f"{len(geometry.ghost_faces)} ghost faces, gamma_D={self.gamma_d:g}")

    # ------------------------------------------------------------------
    # setup
    # ------------------------------------------------------------------
    def _setup_inside(self):
        p = self.degree
        points, weights = gauss_legendre_01(p + 1)
        table = build_shape_table(p, points, 1)
        self._V = table.values
        self._D = table.gradients
        self._W2 = np.outer(weights, weights)
        self.mass_1d = self._V.T @ (weights[:, None] * self._V)
        self.stiffness_1d = self._D.T @ (weights[:, None] * self._D)
        self._inside_dofs = self.dofs.dofs_of_cells(self.geometry.inside_cells)

    def _setup_cut(self):
        """Tabulate physical basis values and gradients at every cut rule point"""
        p, h = self.degree, self.h
        cells = self.quadrature.cells
        lowers = self.geometry.mesh.cell_lower(cells)
        grads_x, grads_y, vol_w = [], [], []
        vals_s, dn_s, surf_w = [], [], []
        for k in range(len(cells)):
            vol = self.quadrature.volume[k]
            _, gx, gy = evaluate_basis(p, (vol.points - lowers[k]) / h)
            grads_x.append(gx / h)
            grads_y.append(gy / h)
            vol_w.append(vol.weights)

            surf = self.quadrature.surface[k]
            values, gx, gy = evaluate_basis(p, (surf.points - lowers[k]) / h)
            vals_s.append(values)
            dn_s.append((surf.normals[:, :1] * gx + surf.normals[:, 1:] * gy) / h)
            surf_w.append(surf.weights)

        n_loc = (p + 1) ** 2
        qv = max((len(w) for w in vol_w), default=0)
        qs = max((len(w) for w in surf_w), default=0)
        self._Gx = _pad(grads_x, qv, (n_loc,))
        self._Gy = _pad(grads_y, qv, (n_loc,))
        self._Wv = _pad(vol_w, qv)
        self._Bs = _pad(vals_s, qs, (n_loc,))
        self._Dn = _pad(dn_s, qs, (n_loc,))
        self._Ws = _pad(surf_w, qs)
        self._cut_dofs = self.dofs.dofs_of_cells(cells)

    def _setup_ghost(self):
        """Jump functionals of the face pair (minus, plus) for every order and face point"""
        p = self.degree
        faces = self.geometry.ghost_faces
        points, weights = gauss_legendre_01(p + 1)
        along = build_shape_table(p, points, 0).values
        ends = build_shape_table(p, np.array([0.0, 1.0]), p).derivatives

        n_loc = (p + 1) ** 2
        self._ghost_jumps = {}
        self._ghost_weights = np.concatenate([
            self.gamma_ghost[k - 1] * self.h ** 2 / factorial(k) ** 2 * weights
            for k in range(1, p + 1)
        ])
        for axis in (0, 1):
            rows = []
            for k in range(1, p + 1):
                at_zero, at_one = ends[k, 0], ends[k, 1]
                for q in range(len(points)):
                    if axis == 0:
                        minus = np.outer(along[q], at_one).ravel()
                        plus = np.outer(along[q], at_zero).ravel()
                    else:
                        minus = np.outer(at_one, along[q]).ravel()
                        plus = np.outer(at_zero, along[q]).ravel()
                    rows.append(np.concatenate([-minus, plus]))
            self._ghost_jumps[axis] = np.array(rows).reshape(-1, 2 * n_loc)

        self._ghost_dofs = {}
        for axis in (0, 1):
            mask = faces.axis == axis
            self._ghost_dofs[axis] = np.hstack([
                self.dofs.dofs_of_cells(faces.minus[mask]),
                self.dofs.dofs_of_cells(faces.plus[mask]),
            ]) if np.any(mask) else np.empty((0, 2 * n_loc), dtype=np.int64)

    # ------------------------------------------------------------------
    # local kernels
    # ------------------------------------------------------------------
    def _inside_kernel(self, u: np.ndarray) -> np.ndarray:
        """Sum-factorized stiffness on a batch of cells, u of shape (n, p+1, p+1) indexed [b, a]"""
        V, D, W = self._V, self._D, self._W2
        ux = V @ (u @ D.T)
        uy = D @ (u @ V.T)
        return V.T @ (W * ux) @ D + D.T @ (W * uy) @ V

    def _cut_kernel(self, chunk, u: np.ndarray) -> np.ndarray:
        """Cut-cell contributions; chunk is a slice or an index array into the cut tables"""
        Gx, Gy, Wv = self._Gx[chunk], self._Gy[chunk], self._Wv[chunk]
        Bs, Dn, Ws = self._Bs[chunk], self._Dn[chunk], self._Ws[chunk]
        ux = np.einsum('cqi,ci->cq', Gx, u)
        uy = np.einsum('cqi,ci->cq', Gy, u)
        us = np.einsum('cqi,ci->cq', Bs, u)
        un = np.einsum('cqi,ci->cq', Dn, u)
        boundary = Ws * ((self.gamma_d / self.h) * us - un)
        return (np.einsum('cqi,cq->ci', Gx, Wv * ux)
                + np.einsum('cqi,cq->ci', Gy, Wv * uy)
                + np.einsum('cqi,cq->ci', Bs, boundary)
                - np.einsum('cqi,cq->ci', Dn, Ws * us))

    def _ghost_values(self, axis: int, u: np.ndarray) -> np.ndarray:
        """Penalty on faces of one axis, u of shape (n_faces, 2 n_loc)"""
        J = self._ghost_jumps[axis]
        return ((u @ J.T) * self._ghost_weights) @ J

    def _scatter(self, dof_blocks, value_blocks) -> np.ndarray:
        if not dof_blocks:
            return np.zeros(self.n_dofs)
        return np.bincount(np.concatenate([d.ravel() for d in dof_blocks]),
                           weights=np.concatenate([v.ravel() for v in value_blocks]),
                           minlength=self.n_dofs)

    def _check_vector(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_dofs,):
            raise OperatorError(f"Vector of shape {x.shape} does not match {self.n_dofs} DoFs")
        return x

    # ------------------------------------------------------------------
    # matrix-free operations
    # ------------------------------------------------------------------
    def bulk_apply(self, x: np.ndarray) -> np.ndarray:
        """Cell contributions of a_l (gradient and Nitsche terms)"""
        x = self._check_vector(x)
        p = self.degree
        dofs, values = [], []

        inside, cut = self._inside_dofs, self._cut_dofs

        def inside_chunk(chunk: slice):
            u = x[inside[chunk]].reshape(-1, p + 1, p + 1)
            return inside[chunk], self._inside_kernel(u).reshape(len(u), -1)

        def cut_chunk(chunk: slice):
            return cut[chunk], self._cut_kernel(chunk, x[cut[chunk]])

        # Chunks come back in order, so the scatter below is independent of the thread count
        for block_dofs, block_values in (map_chunks(inside_chunk, len(inside), self.threads)
                                         + map_chunks(cut_chunk, len(cut), self.threads)):
            dofs.append(block_dofs)
            values.append(block_values)
        return self._scatter(dofs, values)

    def ghost_penalty_apply(self, x: np.ndarray) -> np.ndarray:
        """
        Contribution of g_l alone

        Args:
            x: Coefficient vector

        Returns:
            Vector with entries g_l(u_x, phi_i)
        """
        x = self._check_vector(x)
        dofs, values = [], []
        for axis in (0, 1):
            face_dofs = self._ghost_dofs[axis]
            if len(face_dofs) == 0:
                continue
            values.append(self._ghost_values(axis, x[face_dofs]))
            dofs.append(face_dofs)
        return self._scatter(dofs, values)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """
        Matrix-free y = A_l x

        Constrained DoFs (fitted geometry) keep identity rows and do not couple
        into free rows.

        Args:
            x: Coefficient vector of length n_dofs

        Returns:
            A_l x
        """
        x = self._check_vector(x)
        if len(self._constrained):
            free_x = x.copy()
            free_x[self._constrained] = 0.0
            y = self.bulk_apply(free_x) + self.ghost_penalty_apply(free_x)
            y[self._constrained] = x[self._constrained]
            return y
        return self.bulk_apply(x) + self.ghost_penalty_apply(x)

    def residual(self, x: np.ndarray, b: np.ndarray) -> np.ndarray:
        return b - self.apply(x)

    def row_support(self, rows: np.ndarray) -> RowSupport:
        """Cells and ghost faces contributing to the given rows of A_l"""
        rows = np.asarray(rows, dtype=np.int64)
        hit = np.zeros(self.n_dofs, dtype=bool)
        hit[rows] = True
        return RowSupport(
            rows=rows,
            inside=np.flatnonzero(hit[self._inside_dofs].any(axis=1)),
            cut=np.flatnonzero(hit[self._cut_dofs].any(axis=1)),
            ghost={axis: np.flatnonzero(hit[face_dofs].any(axis=1))
                   for axis, face_dofs in self._ghost_dofs.items()},
        )

    def residual_rows(self, x: np.ndarray, b: np.ndarray, support: RowSupport) -> np.ndarray:
        """
        (b - A_l x) at support.rows, evaluated on the support's cells and faces only

        Args:
            x: Coefficient vector
            b: Right-hand side
            support: Result of row_support

        Returns:
            Residual entries in the order of support.rows
        """
        x = self._check_vector(x)
        rows = support.rows
        free_x = x
        if len(self._constrained):
            free_x = x.copy()
            free_x[self._constrained] = 0.0

        p = self.degree
        dofs, values = [], []
        if len(support.inside):
            block = self._inside_dofs[support.inside]
            u = free_x[block].reshape(-1, p + 1, p + 1)
            dofs.append(block)
            values.append(self._inside_kernel(u).reshape(len(u), -1))
        if len(support.cut):
            block = self._cut_dofs[support.cut]
            dofs.append(block)
            values.append(self._cut_kernel(support.cut, free_x[block]))
        for axis, faces in support.ghost.items():
            if len(faces):
                block = self._ghost_dofs[axis][faces]
                dofs.append(block)
                values.append(self._ghost_values(axis, free_x[block]))

        y = self._scatter(dofs, values)[rows]
        constrained = self.dofs.constrained[rows]
        if np.any(constrained):
            y[constrained] = x[rows][constrained]
        return np.asarray(b, dtype=float)[rows] - y

    # ------------------------------------------------------------------
    # assembled matrices
    # ------------------------------------------------------------------
    @cached_property
    def inside_element_matrix(self) -> np.ndarray:
        """K (x) M + M (x) K for an uncut cell; scale-free in 2D"""
        return np.kron(self.mass_1d, self.stiffness_1d) + np.kron(self.stiffness_1d, self.mass_1d)

    def cut_element_matrices(self) -> np.ndarray:
        """Local matrices of a_l on every cut cell, shape (n_cut, n_loc, n_loc)"""
        Wv, Ws = self._Wv[:, :, None], self._Ws[:, :, None]
        Gx, Gy, Bs, Dn = self._Gx, self._Gy, self._Bs, self._Dn
        coupling = np.einsum('cqi,cqj->cij', Dn, Ws * Bs)
        return (np.einsum('cqi,cqj->cij', Gx, Wv * Gx)
                + np.einsum('cqi,cqj->cij', Gy, Wv * Gy)
                - coupling - coupling.transpose(0, 2, 1)
                + (self.gamma_d / self.h) * np.einsum('cqi,cqj->cij', Bs, Ws * Bs))

    def ghost_face_matrix(self, axis: int) -> np.ndarray:
        """Penalty matrix on the DoFs (minus cell, plus cell) of one ghost face"""
        J = self._ghost_jumps[axis]
        return J.T @ (self._ghost_weights[:, None] * J)

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        """Assembled sparse A_l; setup-only (local solvers, coarse solve, diagonal)"""
        rows, cols, vals = [], [], []

        def add(block_dofs: np.ndarray, local: np.ndarray):
            n = block_dofs.shape[1]
            rows.append(np.repeat(block_dofs, n, axis=1).ravel())
            cols.append(np.tile(block_dofs, (1, n)).ravel())
            vals.append(np.broadcast_to(local, (len(block_dofs), n, n)).reshape(len(block_dofs), -1).ravel())

        if len(self._inside_dofs):
            add(self._inside_dofs, self.inside_element_matrix)
        if len(self._cut_dofs):
            add(self._cut_dofs, self.cut_element_matrices())
        for axis in (0, 1):
            if len(self._ghost_dofs[axis]):
                add(self._ghost_dofs[axis], self.ghost_face_matrix(axis))

        A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(self.n_dofs, self.n_dofs)).tocsr()
        if len(self._constrained):
            keep = np.ones(self.n_dofs)
            keep[self._constrained] = 0.0
            mask = sp.diags(keep)
            A = (mask @ A @ mask + sp.diags(1.0 - keep)).tocsr()
        A.sum_duplicates()
        return A

    def assemble_sparse(self) -> sp.csr_matrix:
        return self.matrix

    def assemble_dense(self) -> np.ndarray:
        """
        Dense A_l for oracles and the coarse solver

        Raises:
            OperatorError: If the level has more than DENSE_SIZE_LIMIT DoFs
        """
        if self.n_dofs > DENSE_SIZE_LIMIT:
            raise OperatorError(f"Dense assembly refused for {self.n_dofs} DoFs (limit {DENSE_SIZE_LIMIT})")
        return self.matrix.toarray()

    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    # ------------------------------------------------------------------
    # data and errors
    # ------------------------------------------------------------------
    def assemble_rhs(self, f: Optional[Function2D] = None, g: Optional[Function2D] = None) -> np.ndarray:
        """
        Load vector (f, phi_i) - (g, dn phi_i)_Gamma + (gamma_D / h)(g, phi_i)_Gamma

        On a fitted geometry g is imposed at the constrained nodes and lifted out of
        the free rows.

        Args:
            f: Source term f(x, y); zero if None
            g: Dirichlet data g(x, y); zero if None

        Returns:
            Right-hand side vector
        """
        p, h = self.degree, self.h
        mesh = self.geometry.mesh
        dofs, values = [], []

        if f is not None:
            inside = self.geometry.inside_cells
            if len(inside):
                points, weights = gauss_legendre_01(p + 1)
                lowers = mesh.cell_lower(inside)
                gy, gx = np.meshgrid(points, points, indexing='ij')
                fx = lowers[:, :1] + h * gx.ravel()[None, :]
                fy = lowers[:, 1:] + h * gy.ravel()[None, :]
                fw = np.broadcast_to(f(fx, fy), fx.shape) * (h * h * self._W2.ravel())[None, :]
                fw = fw.reshape(-1, p + 1, p + 1)
                loads = np.einsum('qb,pa,cqp->cba', self._V, self._V, fw)
                dofs.append(self._inside_dofs)
                values.append(loads.reshape(len(inside), -1))

        cells = self.quadrature.cells
        lowers = mesh.cell_lower(cells)
        for k in range(len(cells)):
            local = np.zeros((p + 1) ** 2)
            if f is not None:
                vol = self.quadrature.volume[k]
                if vol.size:
                    phi = evaluate_basis(p, (vol.points - lowers[k]) / h, with_gradients=False)
                    local += phi.T @ (vol.weights * np.broadcast_to(f(vol.points[:, 0], vol.points[:, 1]),
                                                                    vol.weights.shape))
            if g is not None:
                surf = self.quadrature.surface[k]
                if surf.size:
                    gv = np.broadcast_to(g(surf.points[:, 0], surf.points[:, 1]), surf.weights.shape)
                    local += self._Bs[k, :surf.size].T @ (surf.weights * gv) * (self.gamma_d / h)
                    local -= self._Dn[k, :surf.size].T @ (surf.weights * gv)
            dofs.append(self._cut_dofs[k])
            values.append(local)

        b = self._scatter(dofs, values)
        if len(self._constrained):
            lifted = np.zeros(self.n_dofs)
            if g is not None:
                nodes = self.dofs.node_points[self._constrained]
                lifted[self._constrained] = g(nodes[:, 0], nodes[:, 1])
            coupling = self.bulk_apply(lifted) + self.ghost_penalty_apply(lifted)
            b -= coupling
            b[self._constrained] = lifted[self._constrained]
        return b

    def l2_error(self, x: np.ndarray, exact: Function2D) -> float:
        """
        L2(Omega) norm of u_h - u using one extra Gauss point per direction on inside cells
        and the cut volume rules on cut cells
        """
        x = self._check_vector(x)
        p, h = self.degree, self.h
        mesh = self.geometry.mesh
        total = 0.0

        inside = self.geometry.inside_cells
        if len(inside):
            points, weights = gauss_legendre_01(p + 2)
            V = build_shape_table(p, points, 0).values
            u = x[self._inside_dofs].reshape(-1, p + 1, p + 1)
            uh = V @ u @ V.T
            lowers = mesh.cell_lower(inside)
            gy, gx = np.meshgrid(points, points, indexing='ij')
            ex = exact(lowers[:, :1, None] + h * gx[None], lowers[:, 1:, None] + h * gy[None])
            total += float(np.sum(np.outer(weights, weights)[None] * (uh - ex) ** 2) * h * h)

        cells = self.quadrature.cells
        lowers = mesh.cell_lower(cells)
        for k in range(len(cells)):
            vol = self.quadrature.volume[k]
            if vol.size == 0:
                continue
            phi = evaluate_basis(p, (vol.points - lowers[k]) / h, with_gradients=False)
            diff = phi @ x[self._cut_dofs[k]] - exact(vol.points[:, 0], vol.points[:, 1])
            total += float(np.dot(vol.weights, diff ** 2))
        return float(np.sqrt(total))
