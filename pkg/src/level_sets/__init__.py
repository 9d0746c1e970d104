"""
Level Sets Package
"""
from .base import CellKind, GeometryError, LevelSet
from .circle import CircleLevelSet
from .box import FittedBoxLevelSet

__all__ = [
    'CellKind',
    'GeometryError',
    'LevelSet',
    'CircleLevelSet',
    'FittedBoxLevelSet',
]
