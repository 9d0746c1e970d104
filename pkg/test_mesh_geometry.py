#!/usr/bin/env python3
"""
Tests for the mesh hierarchy and active geometry
Tests:
1. Level sizes, parent/child maps and neighbors
2. Cell classification against sampled level set values
3. Ghost faces: each touches a cut cell and joins two active cells
4. Patches: four active cells around an inside vertex, same-color patches disjoint
5. Nestedness of the active regions across levels
"""
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

import numpy as np
import pytest

from level_sets import CellKind, CircleLevelSet, FittedBoxLevelSet, GeometryError
from mesh_geometry import (N_COLORS, PatchKind, build_active_geometry, build_hierarchy, check_nestedness,
                           classify_cells, collect_ghost_faces, geometry_summary_frame)

BOX = ((-1.21, -1.21), (1.21, 1.21))


def circle_geometry(level: int):
    mesh = build_hierarchy(BOX, level).levels[-1]
    return build_active_geometry(mesh, CircleLevelSet())


def test_hierarchy_sizes():
    print("=" * 60)
    print("TEST: Mesh hierarchy sizes")
    print("=" * 60)
    hierarchy = build_hierarchy(BOX, 4)
    assert hierarchy.n_levels == 5
    for level in range(5):
        n = 2 ** (level + 1)
        assert hierarchy.cells_per_side(level) == n
        assert hierarchy.h(level) == pytest.approx(2.42 / n)
        print(f"  level {level}: {n} x {n} cells, h = {hierarchy.h(level):.5f}")
    print("✓ Hierarchy test PASSED")


def test_hierarchy_rejects_bad_input():
    with pytest.raises(GeometryError):
        build_hierarchy(((0.0, 0.0), (1.0, 2.0)), 2)
    with pytest.raises(GeometryError):
        build_hierarchy(BOX, -1)


def test_parent_children_roundtrip():
    hierarchy = build_hierarchy(BOX, 3)
    coarse, fine = hierarchy.levels[2], hierarchy.levels[3]
    for cell in (0, 5, coarse.n_cells - 1):
        children = coarse.children(cell)
        assert np.all(fine.parent(children) == cell)
        ci, cj = fine.child_position(children)
        assert sorted(zip(ci.tolist(), cj.tolist())) == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_neighbors():
    mesh = build_hierarchy(BOX, 1).levels[-1]
    assert mesh.neighbor(0, 0, -1) == -1
    assert mesh.neighbor(0, 0, +1) == 1
    assert mesh.neighbor(0, 1, +1) == mesh.n
    assert mesh.neighbor(mesh.n_cells - 1, 1, +1) == -1


def test_ghost_faces_touch_cut_cells():
    geometry = circle_geometry(4)
    faces = geometry.ghost_faces
    kinds = geometry.kinds
    assert len(faces) > 0
    assert np.all(kinds[faces.minus] != CellKind.OUTSIDE)
    assert np.all(kinds[faces.plus] != CellKind.OUTSIDE)
    assert np.all((kinds[faces.minus] == CellKind.CUT) | (kinds[faces.plus] == CellKind.CUT))
    n = geometry.mesh.n
    step = np.where(faces.axis == 0, 1, n)
    assert np.all(faces.plus - faces.minus == step)
    # Each face is listed once
    pairs = set(zip(faces.minus.tolist(), faces.plus.tolist()))
    assert len(pairs) == len(faces)


def test_classification_agrees_with_sampling():
    mesh = build_hierarchy(BOX, 3).levels[-1]
    level_set = CircleLevelSet()
    kinds = classify_cells(mesh, level_set)
    t = np.linspace(0.0, 1.0, 9)
    sx, sy = np.meshgrid(t, t)
    for cell in range(mesh.n_cells):
        lower = mesh.cell_lower([cell])[0]
        points = np.column_stack([lower[0] + sx.ravel() * mesh.h, lower[1] + sy.ravel() * mesh.h])
        phi = level_set.evaluate(points)
        if kinds[cell] == CellKind.INSIDE:
            assert np.all(phi <= 0.0)
        elif kinds[cell] == CellKind.OUTSIDE:
            assert np.all(phi >= 0.0)
        elif phi.min() < 0.0 < phi.max():
            continue
        else:
            # Cut cells whose samples miss the arc still reach it between samples
            assert np.min(np.abs(phi)) < mesh.h


def test_classify_cells_rejects_non_level_sets():
    mesh = build_hierarchy(BOX, 1).levels[-1]
    with pytest.raises(GeometryError):
        classify_cells(mesh, lambda points: points[:, 0])


def test_ghost_faces_match_brute_force():
    geometry = circle_geometry(3)
    mesh, kinds = geometry.mesh, geometry.kinds
    expected = set()
    for cell in geometry.active_cells:
        for axis in (0, 1):
            other = mesh.neighbor(int(cell), axis, +1)
            if other < 0 or kinds[other] == CellKind.OUTSIDE:
                continue
            if kinds[cell] == CellKind.CUT or kinds[other] == CellKind.CUT:
                expected.add((int(cell), other))
    faces = collect_ghost_faces(mesh, kinds)
    assert set(zip(faces.minus.tolist(), faces.plus.tolist())) == expected


def test_patches_and_colors():
    print("=" * 60)
    print("TEST: Vertex patches and coloring")
    print("=" * 60)
    geometry = circle_geometry(4)
    kinds = geometry.kinds
    for patch in geometry.patches:
        cells = np.array(patch.cells)
        assert np.all(kinds[cells] != CellKind.OUTSIDE)
        is_cut = np.any(kinds[cells] == CellKind.CUT)
        assert (patch.kind == PatchKind.CUT) == is_cut

    for colors in (geometry.interior_colors, geometry.cut_colors):
        assert len(colors) == N_COLORS
        for members in colors:
            cells = [c for k in members for c in geometry.patches[k].cells]
            assert len(cells) == len(set(cells)), "same-color patches share a cell"

    n_listed = sum(len(m) for m in geometry.interior_colors) + sum(len(m) for m in geometry.cut_colors)
    assert n_listed == len(geometry.patches)
    print(f"  {len(geometry.patches)} patches, {len(geometry.patch_indices(PatchKind.CUT))} cut")
    print("✓ Patch test PASSED")


def test_fitted_square_has_no_cut_cells():
    mesh = build_hierarchy(BOX, 2).levels[-1]
    geometry = build_active_geometry(mesh, FittedBoxLevelSet(*BOX))
    assert len(geometry.cut_cells) == 0
    assert len(geometry.ghost_faces) == 0
    assert len(geometry.active_cells) == mesh.n_cells
    assert len(geometry.patches) == (mesh.n - 1) ** 2
    assert all(p.kind == PatchKind.INTERIOR for p in geometry.patches)


def test_nestedness():
    hierarchy = build_hierarchy(BOX, 4)
    geometries = [build_active_geometry(mesh, CircleLevelSet()) for mesh in hierarchy.levels]
    for coarse, fine in zip(geometries[:-1], geometries[1:]):
        check_nestedness(coarse, fine)

    # A coarse level of a smaller disc cannot contain the fine level of a larger one
    small = build_active_geometry(hierarchy.levels[2], CircleLevelSet((0.0, 0.0), 0.3))
    with pytest.raises(GeometryError):
        check_nestedness(small, geometries[3])


def test_summary_frame():
    frame = geometry_summary_frame([circle_geometry(level) for level in (2, 3)])
    assert list(frame['level']) == [2, 3]
    assert list(frame['cells_per_side']) == [8, 16]
    assert np.all(frame['active_cells'] == frame['inside_cells'] + frame['cut_cells'])


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
