#!/usr/bin/env python3
"""
Tests for the intergrid transfer
Tests:
1. Embedding matrices reproduce coarse polynomials on the children
2. Prolongation of an interpolant equals the fine interpolant
3. Restriction is the exact adjoint of prolongation
4. Constrained DoFs are untouched by transfers
"""
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

import numpy as np
import pytest

from fe_space import distribute_dofs, gauss_lobatto_nodes, interpolate
from level_sets import CircleLevelSet, FittedBoxLevelSet
from mesh_geometry import build_active_geometry, build_hierarchy
from transfer import TransferError, build_transfer, embedding_1d

BOX = ((-1.21, -1.21), (1.21, 1.21))


def level_pair(level: int, p: int, square: bool = False):
    hierarchy = build_hierarchy(BOX, level)
    level_set = FittedBoxLevelSet(*BOX) if square else CircleLevelSet()
    handlers = []
    for mesh in hierarchy.levels[-2:]:
        geometry = build_active_geometry(mesh, level_set)
        handlers.append(distribute_dofs(mesh, geometry.active_cells, p, constrain_boundary=square))
    return handlers


@pytest.mark.parametrize("p", [1, 2, 3])
def test_embedding_1d(p):
    E = embedding_1d(p)
    assert E.shape == (2, p + 1, p + 1)
    nodes = gauss_lobatto_nodes(p)
    # Rows sum to one and reproduce x^p on each half
    assert np.allclose(E.sum(axis=2), 1.0)
    for c in (0, 1):
        assert np.allclose(E[c] @ nodes ** p, ((c + nodes) / 2.0) ** p)
    # Shared end points of the children agree
    assert np.allclose(E[0][-1], E[1][0])


@pytest.mark.parametrize("p", [1, 2, 3])
def test_prolongation_of_interpolants(p):
    print("=" * 60)
    print(f"TEST: Prolongation of Q{p} interpolants")
    print("=" * 60)
    coarse, fine = level_pair(4, p)
    transfer = build_transfer(coarse, fine)
    fn = lambda x, y: (x - 0.1) ** p * (y + 0.4) ** p - x * y
    prolonged = transfer.prolongate(interpolate(coarse, fn))
    error = np.max(np.abs(prolonged - interpolate(fine, fn)))
    print(f"  max error {error:.3e}, {transfer.prolongation.nnz} nonzeros")
    assert error <= 1e-12
    print("✓ Prolongation test PASSED")


@pytest.mark.parametrize("square", [False, True])
@pytest.mark.parametrize("level", [2, 4, 6])
def test_adjointness(level, square):
    coarse, fine = level_pair(level, 2, square)
    transfer = build_transfer(coarse, fine)
    rng = np.random.default_rng(level)
    for _ in range(20):
        x = rng.standard_normal(transfer.n_coarse)
        y = rng.standard_normal(transfer.n_fine)
        Px = transfer.prolongate(x)
        lhs, rhs = np.dot(Px, y), np.dot(x, transfer.restrict(y))
        assert abs(lhs - rhs) <= 1e-13 * np.linalg.norm(Px) * np.linalg.norm(y)


def test_constrained_dofs_untouched():
    coarse, fine = level_pair(3, 1, square=True)
    transfer = build_transfer(coarse, fine)
    x = np.ones(transfer.n_coarse)
    Px = transfer.prolongate(x)
    assert np.all(Px[fine.constrained] == 0.0)
    assert np.all(Px <= 1.0 + 1e-14)
    r = np.ones(transfer.n_fine)
    assert np.all(transfer.restrict(r)[coarse.constrained] == 0.0)


def test_shape_and_degree_errors():
    coarse, fine = level_pair(2, 1)
    transfer = build_transfer(coarse, fine)
    with pytest.raises(TransferError):
        transfer.prolongate(np.zeros(transfer.n_coarse + 1))
    with pytest.raises(TransferError):
        transfer.restrict(np.zeros(transfer.n_fine - 1))
    coarse2, _ = level_pair(2, 2)
    with pytest.raises(TransferError):
        build_transfer(coarse2, fine)


def test_inactive_parent_is_rejected():
    hierarchy = build_hierarchy(BOX, 3)
    coarse_geometry = build_active_geometry(hierarchy.levels[2], CircleLevelSet((0.0, 0.0), 0.3))
    fine_geometry = build_active_geometry(hierarchy.levels[3], CircleLevelSet())
    coarse = distribute_dofs(hierarchy.levels[2], coarse_geometry.active_cells, 1)
    fine = distribute_dofs(hierarchy.levels[3], fine_geometry.active_cells, 1)
    with pytest.raises(TransferError):
        build_transfer(coarse, fine)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
