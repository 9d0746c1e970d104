"""
Base Level Set Interface
"""
from abc import ABC, abstractmethod
from enum import IntEnum
from typing import List, Tuple
import numpy as np


class GeometryError(ValueError):
    """Raised when a geometric construction violates its structural assumptions"""


class CellKind(IntEnum):
    """Classification of a background cell against the domain"""
    INSIDE = 0
    CUT = 1
    OUTSIDE = 2


class LevelSet(ABC):
    """Base class for analytic level set descriptions (negative inside the domain)"""

    # Fitted level sets describe a boundary lying on mesh faces; their Dirichlet
    # data is imposed strongly instead of through Nitsche terms.
    fitted: bool = False

    @abstractmethod
    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """
        Evaluate the level set

        Args:
            points: Array of shape (n, 2) with physical coordinates

        Returns:
            Array of shape (n,) with signed values
        """
        pass

    @abstractmethod
    def gradient(self, points: np.ndarray) -> np.ndarray:
        """
        Evaluate the level set gradient

        Args:
            points: Array of shape (n, 2) with physical coordinates

        Returns:
            Array of shape (n, 2)
        """
        pass

    @abstractmethod
    def classify_boxes(self, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
        """
        Exactly classify axis-aligned boxes against the domain

        Args:
            lower: Array of shape (n, 2) with lower-left corners
            upper: Array of shape (n, 2) with upper-right corners

        Returns:
            Array of shape (n,) with CellKind codes
        """
        pass

    @abstractmethod
    def arc_intervals(self, lower: np.ndarray, upper: np.ndarray) -> List[Tuple[float, float]]:
        """Parameter intervals of the boundary curve lying inside a box"""
        pass

    @abstractmethod
    def get_name(self) -> str:
        """Return a short name of the geometry"""
        pass

    @abstractmethod
    def cache_key(self) -> Tuple:
        """Hashable description used by setup caches"""
        pass
