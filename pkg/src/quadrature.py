"""
Quadrature Module
Tensor Gauss rules on uncut cells and faces, and cut-cell rules for the
part of a cell inside the circle and for the boundary arc within a cell
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, List, Optional, Tuple

import numpy as np
import pandas as pd

from level_sets import CellKind, CircleLevelSet, LevelSet
from mesh_geometry import ActiveGeometry
from parallel import map_chunks

logger = logging.getLogger(__name__)

MAX_BISECTION_DEPTH = 8
# Smallest admissible |normal component| along the height direction (graph slope <= 2)
GRAPH_NORMAL_THRESHOLD = 1.0 / np.sqrt(5.0)
# Extra points across the graph direction, where the integrand is smooth but not polynomial
CUT_OUTER_EXTRA_POINTS = 4
ARC_EXTRA_POINTS = 2


class QuadratureError(ValueError):
    """Raised when a cut-cell rule cannot be constructed"""


@dataclass(frozen=True)
class QuadRule:
    """Points (n, 2), positive weights (n,) and, for boundary rules, unit normals (n, 2)"""
    points: np.ndarray
    weights: np.ndarray
    normals: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def total_weight(self) -> float:
        return float(np.sum(self.weights))

    def integrate(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> float:
        """Integrate a vectorized function f(x, y)"""
        if self.size == 0:
            return 0.0
        values = np.broadcast_to(fn(self.points[:, 0], self.points[:, 1]), self.weights.shape)
        return float(np.dot(self.weights, values))

    def to_frame(self) -> pd.DataFrame:
        """Rule as a table with columns x, y, w, nx, ny (debug dump)"""
        normals = self.normals if self.normals is not None else np.full((self.size, 2), np.nan)
        return pd.DataFrame({
            'x': self.points[:, 0],
            'y': self.points[:, 1],
            'w': self.weights,
            'nx': normals[:, 0],
            'ny': normals[:, 1],
        })

    @staticmethod
    def empty(with_normals: bool = False) -> 'QuadRule':
        return QuadRule(np.empty((0, 2)), np.empty(0), np.empty((0, 2)) if with_normals else None)


@lru_cache(maxsize=None)
def gauss_legendre_01(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gauss-Legendre points and weights on [0, 1]

    Args:
        n: Number of points (>= 1)

    Returns:
        Tuple of (points, weights); weights sum to 1
    """
    if n < 1:
        raise QuadratureError(f"Gauss rule needs at least one point, got {n}")
    t, w = np.polynomial.legendre.leggauss(n)
    points, weights = (t + 1.0) / 2.0, w / 2.0
    points.setflags(write=False)
    weights.setflags(write=False)
    return points, weights


def tensor_gauss(lower: np.ndarray, upper: np.ndarray, n_1d: int) -> QuadRule:
    """
    Tensor Gauss rule on a box, exact for Q_{2 n_1d - 1}

    Args:
        lower: Lower-left corner
        upper: Upper-right corner
        n_1d: Points per direction

    Returns:
        QuadRule with x running fastest
    """
    g, w = gauss_legendre_01(n_1d)
    lower = np.asarray(lower, dtype=float)
    size = np.asarray(upper, dtype=float) - lower
    gy, gx = np.meshgrid(g, g, indexing='ij')
    wy, wx = np.meshgrid(w, w, indexing='ij')
    points = np.column_stack([lower[0] + size[0] * gx.ravel(), lower[1] + size[1] * gy.ravel()])
    return QuadRule(points, (wx * wy).ravel() * size[0] * size[1])


def face_rule(start: np.ndarray, tangent_axis: int, length: float, n_1d: int) -> QuadRule:
    """
    Gauss rule along a full mesh face

    Args:
        start: Face end point with the smaller tangential coordinate
        tangent_axis: 0 for a horizontal face, 1 for a vertical face
        length: Face length h
        n_1d: Number of points

    Returns:
        QuadRule whose weights sum to length
    """
    g, w = gauss_legendre_01(n_1d)
    points = np.tile(np.asarray(start, dtype=float), (n_1d, 1))
    points[:, tangent_axis] += length * g
    return QuadRule(points, length * np.asarray(w))


def _require_circle(level_set: LevelSet) -> CircleLevelSet:
    if not isinstance(level_set, CircleLevelSet):
        raise QuadratureError(f"Cut rules are only available for the circle, got {level_set.get_name()}")
    return level_set


def cut_surface_rule(lower: np.ndarray, upper: np.ndarray, level_set: LevelSet, n_1d: int) -> QuadRule:
    """
    Rule on the boundary arc inside a box, parametrized by angle

    Args:
        lower: Lower-left corner
        upper: Upper-right corner
        level_set: Circle level set
        n_1d: Base point count; each angular interval gets n_1d + 2 points

    Returns:
        QuadRule with outward unit normals; empty for tangential contact
    """
    circle = _require_circle(level_set)
    intervals = circle.arc_intervals(np.asarray(lower), np.asarray(upper))
    if not intervals:
        return QuadRule.empty(with_normals=True)

    g, w = gauss_legendre_01(n_1d + ARC_EXTRA_POINTS)
    thetas, weights = [], []
    for a, b in intervals:
        thetas.append(a + (b - a) * g)
        weights.append(circle.radius * (b - a) * w)
    theta = np.concatenate(thetas)
    normals = np.column_stack([np.cos(theta), np.sin(theta)])
    return QuadRule(circle.center + circle.radius * normals, np.concatenate(weights), normals)


def _min_abs_over_arcs(intervals: List[Tuple[float, float]], fn: Callable, zeros_at: float) -> float:
    """Minimum of |sin| or |cos| over angular intervals; zeros_at is the first zero in [0, pi)"""
    smallest = np.inf
    for a, b in intervals:
        k = np.ceil((a - zeros_at) / np.pi)
        if zeros_at + k * np.pi <= b:
            return 0.0
        smallest = min(smallest, abs(fn(a)), abs(fn(b)))
    return smallest


def _graph_axis(lower: np.ndarray, upper: np.ndarray, circle: CircleLevelSet) -> Optional[int]:
    """Height direction in which the arc inside the box is a well-conditioned graph"""
    intervals = circle.arc_intervals(lower, upper)
    if not intervals:
        # Cut box without arc points cannot occur for exact classification
        return 1
    normal_y = _min_abs_over_arcs(intervals, np.sin, 0.0)
    normal_x = _min_abs_over_arcs(intervals, np.cos, np.pi / 2.0)
    best = max(normal_x, normal_y)
    if best < GRAPH_NORMAL_THRESHOLD:
        return None
    return 1 if normal_y >= normal_x else 0


def _graph_rule(lower: np.ndarray, upper: np.ndarray, circle: CircleLevelSet,
                n_1d: int, height_axis: int) -> Tuple[np.ndarray, np.ndarray]:
    """Iterated Gauss rule with closed-form height bounds from the circle equation"""
    base_axis = 1 - height_axis
    t0, t1 = lower[base_axis], upper[base_axis]
    s0, s1 = lower[height_axis], upper[height_axis]
    ct, cs = circle.center[base_axis], circle.center[height_axis]
    r = circle.radius

    breaks = [t0, t1, ct - r, ct + r]
    for sv in (s0, s1):
        if abs(sv - cs) < r:
            d = np.sqrt(r * r - (sv - cs) ** 2)
            breaks += [ct - d, ct + d]
    breaks = np.unique(np.clip(breaks, t0, t1))

    g_out, w_out = gauss_legendre_01(2 * n_1d + CUT_OUTER_EXTRA_POINTS)
    g_in, w_in = gauss_legendre_01(n_1d)

    t_all, s_all, w_all = [], [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b - a <= 1e-15 * (t1 - t0):
            continue
        t = a + (b - a) * g_out
        wt = (b - a) * np.asarray(w_out)
        chord = r * r - (t - ct) ** 2
        valid = chord > 0.0
        half = np.sqrt(np.where(valid, chord, 0.0))
        lo = np.maximum(s0, cs - half)
        hi = np.minimum(s1, cs + half)
        valid &= hi > lo
        if not np.any(valid):
            continue
        t, wt, lo, hi = t[valid], wt[valid], lo[valid], hi[valid]
        span = hi - lo
        t_all.append(np.repeat(t, n_1d))
        s_all.append((lo[:, None] + span[:, None] * g_in[None, :]).ravel())
        w_all.append((wt[:, None] * span[:, None] * w_in[None, :]).ravel())

    if not t_all:
        return np.empty((0, 2)), np.empty(0)
    t, s, w = np.concatenate(t_all), np.concatenate(s_all), np.concatenate(w_all)
    points = np.empty((len(t), 2))
    points[:, base_axis] = t
    points[:, height_axis] = s
    return points, w


def _collect_volume(lower: np.ndarray, upper: np.ndarray, circle: CircleLevelSet, n_1d: int,
                    depth: int, max_depth: int, points: list, weights: list) -> None:
    kind = circle.classify_boxes(lower[None, :], upper[None, :])[0]
    if kind == CellKind.OUTSIDE:
        return
    if kind == CellKind.INSIDE:
        rule = tensor_gauss(lower, upper, n_1d)
        points.append(rule.points)
        weights.append(rule.weights)
        return

    axis = _graph_axis(lower, upper, circle)
    if axis is None:
        if depth >= max_depth:
            raise QuadratureError(
                f"Box {tuple(lower)} - {tuple(upper)} is too coarse for a graph representation "
                f"of the boundary after {max_depth} bisections"
            )
        mid = (lower + upper) / 2.0
        for lo_x, hi_x in ((lower[0], mid[0]), (mid[0], upper[0])):
            for lo_y, hi_y in ((lower[1], mid[1]), (mid[1], upper[1])):
                _collect_volume(np.array([lo_x, lo_y]), np.array([hi_x, hi_y]), circle, n_1d,
                                depth + 1, max_depth, points, weights)
        return

    p, w = _graph_rule(lower, upper, circle, n_1d, axis)
    points.append(p)
    weights.append(w)


def cut_volume_rule(lower: np.ndarray, upper: np.ndarray, level_set: LevelSet, n_1d: int,
                    max_depth: int = MAX_BISECTION_DEPTH) -> QuadRule:
    """
    Rule on the part of a box inside the circle

    The box is bisected until the arc in each piece is a graph over one axis with
    slope at most 2; every piece is then integrated by iterated Gauss quadrature
    between analytic height bounds.

    Args:
        lower: Lower-left corner
        upper: Upper-right corner
        level_set: Circle level set
        n_1d: Points along the height direction (exact for degree 2 n_1d - 1)
        max_depth: Maximum bisection depth

    Returns:
        QuadRule over box intersected with the disc
    """
    circle = _require_circle(level_set)
    points, weights = [], []
    _collect_volume(np.asarray(lower, dtype=float), np.asarray(upper, dtype=float), circle,
                    n_1d, 0, max_depth, points, weights)
    if not points:
        return QuadRule.empty()
    return QuadRule(np.concatenate(points), np.concatenate(weights))


@dataclass(frozen=True)
class CutQuadrature:
    """Precomputed volume and arc rules for every cut cell of a level"""
    cells: np.ndarray
    volume: Tuple[QuadRule, ...]
    surface: Tuple[QuadRule, ...]

    def total_volume(self) -> float:
        return float(sum(rule.total_weight for rule in self.volume))

    def total_length(self) -> float:
        return float(sum(rule.total_weight for rule in self.surface))


def build_cut_quadrature(geometry: ActiveGeometry, n_1d: int, threads: int = 1) -> CutQuadrature:
    """
    Generate rules for all cut cells of a level

    Args:
        geometry: Level geometry
        n_1d: Base point count
        threads: Worker count (rules are independent per cell)

    Returns:
        CutQuadrature aligned with geometry.cut_cells
    """
    cells = geometry.cut_cells
    lowers = geometry.mesh.cell_lower(cells)
    uppers = geometry.mesh.cell_upper(cells)
    level_set = geometry.level_set

    def build_chunk(chunk: slice):
        return [(cut_volume_rule(lowers[k], uppers[k], level_set, n_1d),
                 cut_surface_rule(lowers[k], uppers[k], level_set, n_1d))
                for k in range(chunk.start, chunk.stop)]

    pairs = [pair for chunk in map_chunks(build_chunk, len(cells), threads) for pair in chunk]
    quadrature = CutQuadrature(
        cells=cells,
        volume=tuple(v for v, _ in pairs),
        surface=tuple(s for _, s in pairs),
    )
    logger.debug(f"Level {geometry.mesh.level}: cut rules for {len(cells)} cells, "
                 f"area {quadrature.total_volume():.12f}, arc {quadrature.total_length():.12f}")
    return quadrature
