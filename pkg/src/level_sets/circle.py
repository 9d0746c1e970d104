"""
Circle Level Set
Analytic signed distance to a circle with exact zero level on its perimeter
"""
import numpy as np
from typing import List, Tuple
from .base import CellKind, GeometryError, LevelSet

TWO_PI = 2.0 * np.pi


class CircleLevelSet(LevelSet):
    """Disc domain described by phi(x) = |x - center| - radius"""

    def __init__(self, center: Tuple[float, float] = (0.0, 0.0), radius: float = 1.0):
        """
        Initialize the circle

        Args:
            center: Circle center in physical coordinates
            radius: Circle radius (must be positive)
        """
        if radius <= 0:
            raise GeometryError(f"Circle radius must be positive, got {radius}")
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    def get_name(self) -> str:
        return "circle"

    def cache_key(self) -> Tuple:
        return ("circle", float(self.center[0]), float(self.center[1]), self.radius)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.hypot(points[:, 0] - self.center[0], points[:, 1] - self.center[1]) - self.radius

    def gradient(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        offset = points - self.center
        norm = np.hypot(offset[:, 0], offset[:, 1])[:, None]
        # The gradient is undefined at the center; report zero there
        return np.divide(offset, norm, out=np.zeros_like(offset), where=norm > 0)

    def classify_boxes(self, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
        lower = np.atleast_2d(lower)
        upper = np.atleast_2d(upper)

        nearest = np.clip(self.center, lower, upper)
        d_min = np.hypot(*(nearest - self.center).T)

        farthest = np.maximum(np.abs(lower - self.center), np.abs(upper - self.center))
        d_max = np.hypot(*farthest.T)

        kinds = np.full(len(lower), CellKind.CUT, dtype=np.int8)
        kinds[d_max <= self.radius] = CellKind.INSIDE
        # Tangential contact has measure zero and counts as outside
        kinds[d_min >= self.radius] = CellKind.OUTSIDE
        return kinds

    def point_at(self, theta: np.ndarray) -> np.ndarray:
        """Points on the circle at the given angles, shape (n, 2)"""
        theta = np.asarray(theta, dtype=float)
        return self.center + self.radius * np.column_stack([np.cos(theta), np.sin(theta)])

    def arc_intervals(self, lower: np.ndarray, upper: np.ndarray) -> List[Tuple[float, float]]:
        """
        Angular intervals of the circle inside a closed box, computed in closed form

        Args:
            lower: Lower-left box corner
            upper: Upper-right box corner

        Returns:
            Sorted list of (start, end) angles; an interval may extend past 2*pi
            when it wraps around the positive x axis. Empty for tangential contact.
        """
        cx, cy = self.center
        r = self.radius
        candidates = [0.0, TWO_PI]

        for xv in (lower[0], upper[0]):
            t = (xv - cx) / r
            if abs(t) < 1.0:
                a = np.arccos(t)
                candidates += [a, TWO_PI - a]
        for yv in (lower[1], upper[1]):
            t = (yv - cy) / r
            if abs(t) < 1.0:
                a = np.arcsin(t)
                candidates += [a % TWO_PI, (np.pi - a) % TWO_PI]

        angles = np.unique(np.clip(candidates, 0.0, TWO_PI))
        scale = max(upper[0] - lower[0], upper[1] - lower[1])
        tol = 1e-14 * max(scale, r)

        kept = []
        for a, b in zip(angles[:-1], angles[1:]):
            if b - a <= 1e-15:
                continue
            mid = self.point_at([(a + b) / 2.0])[0]
            if np.all(mid >= np.asarray(lower) - tol) and np.all(mid <= np.asarray(upper) + tol):
                if kept and abs(kept[-1][1] - a) <= 1e-15:
                    kept[-1] = (kept[-1][0], b)
                else:
                    kept.append((a, b))

        # Merge an interval ending at 2*pi with one starting at 0
        if len(kept) > 1 and kept[0][0] == 0.0 and kept[-1][1] == TWO_PI:
            first = kept.pop(0)
            last = kept.pop()
            kept.append((last[0], TWO_PI + first[1]))

        return kept
