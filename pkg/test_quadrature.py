#!/usr/bin/env python3
"""
Tests for tensor and cut-cell quadrature
Tests:
1. Gauss rules integrate polynomials of degree 2n - 1 exactly
2. Cut volume rules against scipy dblquad on single cut cells
3. Summed areas and arc lengths converge to pi and 2 pi
4. Arc rules: unit normals, points on the circle
"""
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

import numpy as np
import pytest
from scipy import integrate

from level_sets import CircleLevelSet, FittedBoxLevelSet
from mesh_geometry import build_active_geometry, build_hierarchy
from quadrature import (QuadratureError, build_cut_quadrature, cut_surface_rule, cut_volume_rule, face_rule,
                        gauss_legendre_01, tensor_gauss)

BOX = ((-1.21, -1.21), (1.21, 1.21))
CIRCLE = CircleLevelSet()


def circle_quadrature(level: int, n_1d: int = 2):
    mesh = build_hierarchy(BOX, level).levels[-1]
    geometry = build_active_geometry(mesh, CIRCLE)
    return geometry, build_cut_quadrature(geometry, n_1d)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_gauss_exactness(n):
    points, weights = gauss_legendre_01(n)
    assert weights.sum() == pytest.approx(1.0, abs=1e-15)
    for k in range(2 * n):
        assert np.dot(weights, points ** k) == pytest.approx(1.0 / (k + 1), rel=1e-13)


def test_gauss_tables_are_read_only():
    points, _ = gauss_legendre_01(3)
    with pytest.raises(ValueError):
        points[0] = 0.0


def test_tensor_and_face_rules():
    rule = tensor_gauss(np.array([0.5, -1.0]), np.array([1.5, 1.0]), 3)
    assert rule.total_weight == pytest.approx(2.0)
    # x^5 y^4 over [0.5, 1.5] x [-1, 1]
    exact = (1.5 ** 6 - 0.5 ** 6) / 6.0 * 2.0 / 5.0
    assert rule.integrate(lambda x, y: x ** 5 * y ** 4) == pytest.approx(exact, rel=1e-13)

    face = face_rule(np.array([0.0, 2.0]), 0, 0.5, 2)
    assert face.total_weight == pytest.approx(0.5)
    assert np.allclose(face.points[:, 1], 2.0)


def test_single_cut_cell_against_dblquad():
    """Polynomial integrals over one cut cell match adaptive integration"""
    print("=" * 60)
    print("TEST: Cut volume rule vs dblquad")
    print("=" * 60)
    lower, upper = np.array([0.6, 0.3]), np.array([0.9, 0.6])
    rule = cut_volume_rule(lower, upper, CIRCLE, 3)

    def inside(fn):
        # x outer, y inner up to the circle clipped to the cell
        value, _ = integrate.dblquad(
            lambda y, x: fn(x, y), lower[0], upper[0],
            lambda x: lower[1], lambda x: np.clip(np.sqrt(max(1.0 - x * x, 0.0)), lower[1], upper[1]),
            epsabs=1e-13, epsrel=1e-13)
        return value

    for name, fn in [('1', lambda x, y: np.ones_like(x)),
                     ('x^2 y', lambda x, y: x ** 2 * y),
                     ('x y^3 + y', lambda x, y: x * y ** 3 + y)]:
        expected = inside(fn)
        got = rule.integrate(fn)
        print(f"  {name}: rule {got:.14f}, dblquad {expected:.14f}")
        assert got == pytest.approx(expected, rel=1e-10, abs=1e-13)
    print("✓ dblquad comparison PASSED")


def test_cut_cell_needing_bisection():
    """A box holding a full quarter arc is bisected before integration"""
    rule = cut_volume_rule(np.array([0.0, 0.0]), np.array([1.1, 1.1]), CIRCLE, 3)
    assert rule.total_weight == pytest.approx(np.pi / 4.0, abs=1e-10)
    with pytest.raises(QuadratureError):
        cut_volume_rule(np.array([0.0, 0.0]), np.array([1.1, 1.1]), CIRCLE, 3, max_depth=0)


def test_whole_disc_in_one_box():
    rule = cut_volume_rule(np.array([-1.21, -1.21]), np.array([1.21, 1.21]), CIRCLE, 4)
    assert rule.total_weight == pytest.approx(np.pi, abs=1e-9)
    assert np.all(rule.weights > 0)
    assert np.all(np.hypot(rule.points[:, 0], rule.points[:, 1]) <= 1.0 + 1e-12)


def test_surface_rule_geometry():
    lower, upper = np.array([0.6, 0.3]), np.array([0.9, 0.6])
    rule = cut_surface_rule(lower, upper, CIRCLE, 2)
    assert rule.size > 0
    assert np.allclose(np.hypot(rule.points[:, 0], rule.points[:, 1]), 1.0)
    assert np.allclose(np.hypot(rule.normals[:, 0], rule.normals[:, 1]), 1.0)
    assert np.allclose(rule.normals, rule.points)
    intervals = CIRCLE.arc_intervals(lower, upper)
    assert rule.total_weight == pytest.approx(sum(b - a for a, b in intervals), rel=1e-14)


def test_cut_rules_need_a_circle():
    with pytest.raises(QuadratureError):
        cut_volume_rule(np.zeros(2), np.ones(2), FittedBoxLevelSet((-1, -1), (1, 1)), 2)


@pytest.mark.parametrize("level,tolerance", [(4, 1e-7), (6, 1e-9)])
def test_total_area_and_length(level, tolerance):
    print("=" * 60)
    print(f"TEST: Area and arc length on level {level}")
    print("=" * 60)
    geometry, quadrature = circle_quadrature(level)
    area = len(geometry.inside_cells) * geometry.mesh.h ** 2 + quadrature.total_volume()
    length = quadrature.total_length()
    print(f"  area error {abs(area - np.pi):.3e}, length error {abs(length - 2 * np.pi):.3e}")
    assert abs(area - np.pi) <= tolerance
    assert abs(length - 2.0 * np.pi) <= 1e-9
    print("✓ Area/length test PASSED")


def test_quadrature_is_thread_independent():
    mesh = build_hierarchy(BOX, 5).levels[-1]
    geometry = build_active_geometry(mesh, CIRCLE)
    serial = build_cut_quadrature(geometry, 2, threads=1)
    threaded = build_cut_quadrature(geometry, 2, threads=4)
    for a, b in zip(serial.volume, threaded.volume):
        assert np.array_equal(a.points, b.points) and np.array_equal(a.weights, b.weights)


def test_rule_frame_columns():
    rule = cut_surface_rule(np.array([0.6, 0.3]), np.array([0.9, 0.6]), CIRCLE, 1)
    frame = rule.to_frame()
    assert list(frame.columns) == ['x', 'y', 'w', 'nx', 'ny']
    assert len(frame) == rule.size


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
