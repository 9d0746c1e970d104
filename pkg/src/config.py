"""
Experiment Configuration
Declarative run settings with all defaults of the reference setup pre-filled
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, Optional, Tuple

from level_sets import CircleLevelSet, FittedBoxLevelSet, LevelSet
from level_operator import default_nitsche_penalty
from parallel import resolve_threads
from smoothers import DEFAULT_CUT_SWEEPS, SmootherConfig

logger = logging.getLogger(__name__)

# ============================================================================
# CONSTANTS
# ============================================================================
BOX_HALF_WIDTH = 1.21
CIRCLE_RADIUS = 1.0
DEFAULT_LEVELS = (4, 5, 6)
DEFAULT_GHOST_GAMMA = 0.08
GHOST_SWEEP_VALUES = (0.05, 0.06, 0.07, 0.08, 0.09, 0.10, 0.11, 0.12, 0.13, 0.14, 0.15)
OUTPUT_DIR_ENV_VAR = 'CUTMG_OUTPUT_DIR'
DEFAULT_OUTPUT_DIR = 'results'

GEOMETRIES = ('circle', 'square')
SMOOTHERS = ('mvs', 'chebyshev')
SOLVERS = ('gmres', 'vcycle')


class ConfigError(ValueError):
    """Raised when an experiment configuration is inconsistent"""


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: geometry, discretization, smoother, solver and output"""
    geometry: str = 'circle'
    degree: int = 1
    degrees: Tuple[int, ...] = (1, 2, 3)
    levels: Tuple[int, ...] = DEFAULT_LEVELS
    smoother: str = 'mvs'
    n_c: int = DEFAULT_CUT_SWEEPS
    gamma_d: Optional[float] = None
    gamma_k: Tuple[float, ...] = (DEFAULT_GHOST_GAMMA,)
    solver: str = 'gmres'
    tol: float = 1e-9
    max_it: int = 500
    chebyshev_degree: int = 5
    chebyshev_range: float = 20.0
    box_half_width: float = BOX_HALF_WIDTH
    radius: float = CIRCLE_RADIUS
    output_dir: str = field(default_factory=lambda: os.getenv(OUTPUT_DIR_ENV_VAR, DEFAULT_OUTPUT_DIR))
    threads: Optional[int] = None
    allow_indefinite: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """
        Check every field

        Raises:
            ConfigError: With a message naming the offending field
        """
        if self.geometry not in GEOMETRIES:
            raise ConfigError(f"geometry must be one of {GEOMETRIES}, got '{self.geometry}'")
        for p in (self.degree,) + tuple(self.degrees):
            if p not in (1, 2, 3):
                raise ConfigError(f"degree must be 1, 2 or 3, got {p}")
        if not self.levels:
            raise ConfigError("levels must name at least one level")
        if any(level < 0 for level in self.levels):
            raise ConfigError(f"levels must be nonnegative, got {self.levels}")
        if self.smoother not in SMOOTHERS:
            raise ConfigError(f"smoother must be one of {SMOOTHERS}, got '{self.smoother}'")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}, got '{self.solver}'")
        if self.n_c < 1:
            raise ConfigError(f"n_c must be at least 1, got {self.n_c}")
        if self.gamma_d is not None and self.gamma_d <= 0 and not self.allow_indefinite:
            raise ConfigError(f"gamma_d must be positive, got {self.gamma_d}")
        if not self.gamma_k or any(g < 0 for g in self.gamma_k):
            raise ConfigError(f"gamma_k must be a nonempty list of nonnegative values, got {self.gamma_k}")
        if not 0 < self.tol <= 1:
            raise ConfigError(f"tol must lie in (0, 1], got {self.tol}")
        if self.max_it < 1:
            raise ConfigError(f"max_it must be at least 1, got {self.max_it}")
        if self.chebyshev_degree < 1:
            raise ConfigError(f"chebyshev_degree must be at least 1, got {self.chebyshev_degree}")
        if self.chebyshev_range <= 1:
            raise ConfigError(f"chebyshev_range must exceed 1, got {self.chebyshev_range}")
        if self.radius <= 0 or self.box_half_width <= 0:
            raise ConfigError("radius and box_half_width must be positive")
        if self.geometry == 'circle' and self.radius >= self.box_half_width:
            raise ConfigError(f"circle of radius {self.radius} does not fit in the box of half width "
                              f"{self.box_half_width}")
        if self.threads is not None and self.threads < 1:
            raise ConfigError(f"threads must be at least 1, got {self.threads}")

    # ------------------------------------------------------------------
    # derived parameters
    # ------------------------------------------------------------------
    @property
    def domain_box(self) -> Tuple[Tuple[float, float], Tuple[float, float]]:
        w = self.box_half_width
        return ((-w, -w), (w, w))

    def level_set(self) -> LevelSet:
        if self.geometry == 'square':
            return FittedBoxLevelSet(*self.domain_box)
        return CircleLevelSet((0.0, 0.0), self.radius)

    def resolved_gamma_d(self, degree: int) -> float:
        return default_nitsche_penalty(degree) if self.gamma_d is None else self.gamma_d

    def ghost_coefficients(self, degree: int) -> Tuple[float, ...]:
        """gamma_k for k = 1..degree; a short list repeats its last entry"""
        values = tuple(self.gamma_k[:degree])
        return values + (self.gamma_k[-1],) * (degree - len(values))

    def smoother_config(self) -> SmootherConfig:
        return SmootherConfig(kind=self.smoother, n_c=self.n_c, chebyshev_degree=self.chebyshev_degree,
                              smoothing_range=self.chebyshev_range, threads=resolve_threads(self.threads))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def apply_overrides(config: ExperimentConfig, **overrides) -> ExperimentConfig:
    """
    Return a copy with the given fields replaced; None values are ignored

    Raises:
        ConfigError: For unknown fields or invalid values
    """
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(overrides) - known
    if unknown:
        raise ConfigError(f"Unknown configuration fields: {sorted(unknown)}")
    changes = {k: (tuple(v) if isinstance(v, list) else v) for k, v in overrides.items() if v is not None}
    return replace(config, **changes)


def load_config_file(path: str) -> ExperimentConfig:
    """
    Read a JSON file whose keys are ExperimentConfig fields

    Raises:
        ConfigError: If the file is missing, malformed or has invalid values
    """
    try:
        with open(path, 'r') as handle:
            data = json.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object")
    logger.info(f"Loaded configuration from {path}")
    return apply_overrides(ExperimentConfig(), **data)


def parse_levels(text: str) -> Tuple[int, ...]:
    """Parse '4-6' or '4,5,6' into a tuple of levels"""
    try:
        if '-' in text:
            lo, hi = text.split('-', 1)
            return tuple(range(int(lo), int(hi) + 1))
        return tuple(int(part) for part in text.split(',') if part.strip())
    except ValueError:
        raise ConfigError(f"Cannot parse levels '{text}'; use '4-6' or '4,5,6'")


def parse_floats(text: str) -> Tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(',') if part.strip())
    except ValueError:
        raise ConfigError(f"Cannot parse '{text}' as a comma-separated list of numbers")
