"""
Fitted Box Level Set
Square domain whose boundary coincides with the mesh box
"""
import numpy as np
from typing import List, Tuple
from .base import CellKind, GeometryError, LevelSet


class FittedBoxLevelSet(LevelSet):
    """Axis-aligned box described by the max-norm distance to its center"""

    fitted = True

    def __init__(self, lower: Tuple[float, float], upper: Tuple[float, float]):
        """
        Initialize the box

        Args:
            lower: Lower-left corner
            upper: Upper-right corner
        """
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if np.any(self.upper <= self.lower):
            raise GeometryError(f"Degenerate box {tuple(self.lower)} - {tuple(self.upper)}")
        self._center = (self.lower + self.upper) / 2.0
        self._half = (self.upper - self.lower) / 2.0

    def get_name(self) -> str:
        return "square"

    def cache_key(self) -> Tuple:
        return ("square",) + tuple(self.lower) + tuple(self.upper)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.max(np.abs(points - self._center) - self._half, axis=1)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        offset = np.abs(points - self._center) - self._half
        axis = np.argmax(offset, axis=1)
        grad = np.zeros_like(points)
        grad[np.arange(len(points)), axis] = np.sign(points[np.arange(len(points)), axis]
                                                     - self._center[axis])
        return grad

    def classify_boxes(self, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
        lower = np.atleast_2d(lower)
        upper = np.atleast_2d(upper)
        tol = 1e-12 * np.max(self._half)

        inside = np.all(lower >= self.lower - tol, axis=1) & np.all(upper <= self.upper + tol, axis=1)
        overlap = np.all(upper > self.lower + tol, axis=1) & np.all(lower < self.upper - tol, axis=1)

        kinds = np.full(len(lower), CellKind.OUTSIDE, dtype=np.int8)
        kinds[overlap] = CellKind.CUT
        kinds[inside] = CellKind.INSIDE
        return kinds

    def arc_intervals(self, lower: np.ndarray, upper: np.ndarray) -> List[Tuple[float, float]]:
        raise GeometryError("A fitted box has no cut boundary; its Dirichlet data is imposed on mesh nodes")
