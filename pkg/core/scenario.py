"""
Problem-instance data model.

A Scenario bundles the true and generated point masses, the kernel and the GDA
hyperparameters. Scenario documents are YAML with sections `kernel`, `real`,
`generated` and `hyper`; every model is validated with pydantic and frozen
after construction.
"""

import re
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import yaml
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PositiveFloat,
    ValidationError,
    field_validator,
    model_validator,
)

from config.loader import config, get_numerics_config
from core.exceptions import (
    DimensionMismatchError,
    ScenarioParseError,
    ScenarioValidationError,
)
from core.kernel import KernelSpec, gram
from utils.logging import get_core_logger

logger = get_core_logger("scenario")

BUNDLED_NAME = re.compile(r"[A-Za-z0-9_-]+")


# ===============================
# MODELS
# ===============================

class PointMasses(BaseModel):
    """Weighted point masses: N points in R^d with positive masses."""

    model_config = ConfigDict(frozen=True)

    points: List[List[float]]
    weights: List[PositiveFloat]

    @field_validator('points')
    @classmethod
    def _rectangular(cls, v: List[List[float]]) -> List[List[float]]:
        if not v:
            raise ValueError("at least one point is required")
        width = len(v[0])
        if width == 0:
            raise ValueError("points must have dimension >= 1")
        for row in v:
            if len(row) != width:
                raise DimensionMismatchError(width, len(row), "point")
            if not all(np.isfinite(row)):
                raise ValueError("points must be finite")
        return v

    @model_validator(mode='after')
    def _lengths_match(self) -> 'PointMasses':
        if len(self.points) != len(self.weights):
            raise ValueError(f"{len(self.points)} points but {len(self.weights)} weights")
        return self

    @property
    def dimension(self) -> int:
        return len(self.points[0])

    @property
    def count(self) -> int:
        return len(self.points)

    @property
    def X(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float)

    @property
    def w(self) -> np.ndarray:
        return np.asarray(self.weights, dtype=float)


class Hyperparams(BaseModel):
    """Step sizes and regularization. mu = eta_g / eta_d is always derived."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    eta_d: PositiveFloat
    eta_g: PositiveFloat
    lam: PositiveFloat = Field(alias='lambda')

    @property
    def mu(self) -> float:
        return self.eta_g / self.eta_d


class Scenario(BaseModel):
    """A full problem instance."""

    model_config = ConfigDict(frozen=True)

    kernel: KernelSpec
    real: PointMasses
    generated: PointMasses
    hyper: Hyperparams

    @model_validator(mode='after')
    def _shared_dimension(self) -> 'Scenario':
        for what, masses in (("real.points", self.real), ("generated.points", self.generated)):
            if masses.dimension != self.kernel.dimension:
                raise DimensionMismatchError(self.kernel.dimension, masses.dimension, what)
        return self

    @property
    def sigma(self) -> float:
        return self.kernel.width

    @property
    def dimension(self) -> int:
        return self.kernel.dimension


class NeighborhoodPartition(BaseModel):
    """Assignment of generated points to their nearest true point."""

    model_config = ConfigDict(frozen=True)

    assignments: Dict[int, int]
    separation_ok: bool
    kernel_floor: float
    eps: float
    n_regions: int

    def members(self, i: int) -> List[int]:
        """Generated indices j in N_i, ascending."""
        return sorted(j for j, region in self.assignments.items() if region == i)


class RegionMass(BaseModel):
    index: int
    p: float
    n_gen: int
    weights: List[float]


# ===============================
# CONSTRUCTION
# ===============================

def build_scenario(real_points, real_weights, gen_points, gen_weights, width: float,
                   eta_d: float, eta_g: float, lam: float) -> Scenario:
    """Build a validated Scenario from array-likes; dimension is taken from the real points."""
    real_X = np.atleast_2d(np.asarray(real_points, dtype=float))
    gen_X = np.atleast_2d(np.asarray(gen_points, dtype=float))
    document = {
        'kernel': {'family': 'RBF', 'width': width, 'dimension': int(real_X.shape[1])},
        'real': {'points': real_X.tolist(), 'weights': np.atleast_1d(real_weights).astype(float).tolist()},
        'generated': {'points': gen_X.tolist(), 'weights': np.atleast_1d(gen_weights).astype(float).tolist()},
        'hyper': {'eta_d': eta_d, 'eta_g': eta_g, 'lambda': lam},
    }
    return _validate(document)


def _field_path(loc) -> str:
    path = ""
    for part in loc:
        path += f"[{part}]" if isinstance(part, int) else (f".{part}" if path else str(part))
    return path


def _validate(document: dict) -> Scenario:
    try:
        return Scenario.model_validate(document)
    except ValidationError as e:
        first = e.errors()[0]
        original = (first.get('ctx') or {}).get('error')
        if isinstance(original, DimensionMismatchError):
            raise original from e
        raise ScenarioValidationError(_field_path(first['loc']), first['msg']) from e


def bundled_scenario_path(name: str) -> Path:
    """Path of a bundled scenario under `paths.scenarios` (relative paths resolve from the project root)."""
    root = Path(config.get('paths.scenarios', './scenarios'))
    if not root.is_absolute():
        root = Path(__file__).resolve().parent.parent / root
    return root / f"{name}.yaml"


def load_scenario(source: Union[str, Path]) -> Scenario:
    """
    Load a scenario from a YAML file path, a bundled scenario name or YAML text.

    Raises ScenarioParseError (with line) for malformed text, ScenarioValidationError
    (with field path) for invariant violations and DimensionMismatchError when the
    real and generated points disagree on d.
    """
    text = source
    if isinstance(source, str) and BUNDLED_NAME.fullmatch(source) and not Path(source).exists():
        source = bundled_scenario_path(source)
        if not source.is_file():
            raise FileNotFoundError(f"No bundled scenario {source.stem!r} in {source.parent}")
    if isinstance(source, str) and source.endswith(('.yaml', '.yml')) and not Path(source).exists():
        raise FileNotFoundError(f"Scenario file not found: {source}")
    if isinstance(source, Path) or (isinstance(source, str) and '\n' not in source and Path(source).is_file()):
        path = Path(source)
        text = path.read_text()
        logger.debug("Loading scenario", path=str(path))

    try:
        document = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        raise ScenarioParseError(str(getattr(e, 'problem', None) or e),
                                 line=mark.line + 1 if mark is not None else None) from e

    if not isinstance(document, dict):
        raise ScenarioParseError("scenario document must be a mapping")
    for section in ('kernel', 'real', 'generated', 'hyper'):
        if section not in document:
            raise ScenarioValidationError(section, "section is missing")

    kernel = dict(document['kernel'] or {})
    if 'dimension' not in kernel:
        try:
            kernel['dimension'] = len(document['real']['points'][0])
        except (KeyError, IndexError, TypeError):
            raise ScenarioValidationError("real.points", "cannot infer dimension") from None
    document = {**document, 'kernel': kernel}
    return _validate(document)


def dump_scenario(s: Scenario) -> str:
    """YAML text that load_scenario turns back into an equal Scenario."""
    document = {
        'kernel': {'family': s.kernel.family.value, 'width': s.kernel.width, 'dimension': s.kernel.dimension},
        'real': {'points': s.real.points, 'weights': s.real.weights},
        'generated': {'points': s.generated.points, 'weights': s.generated.weights},
        'hyper': {'eta_d': s.hyper.eta_d, 'eta_g': s.hyper.eta_g, 'lambda': s.hyper.lam},
    }
    return yaml.safe_dump(document, sort_keys=False, default_flow_style=None)


def with_overrides(s: Scenario, sigma: Optional[float] = None, lam: Optional[float] = None,
                   eta_d: Optional[float] = None, eta_g: Optional[float] = None,
                   mu: Optional[float] = None) -> Scenario:
    """
    Copy of s with some parameters replaced.

    When mu is given eta_g is recomputed as mu * eta_d (after any eta_d override);
    otherwise eta_g keeps its value unless overridden directly.
    """
    new_eta_d = eta_d if eta_d is not None else s.hyper.eta_d
    new_eta_g = eta_g if eta_g is not None else s.hyper.eta_g
    if mu is not None:
        new_eta_g = mu * new_eta_d
    return build_scenario(
        s.real.X, s.real.w, s.generated.X, s.generated.w,
        width=sigma if sigma is not None else s.kernel.width,
        eta_d=new_eta_d, eta_g=new_eta_g,
        lam=lam if lam is not None else s.hyper.lam,
    )


def with_generated(s: Scenario, points) -> Scenario:
    """Copy of s with the generated positions replaced (weights kept)."""
    return build_scenario(s.real.X, s.real.w, points, s.generated.w,
                          width=s.kernel.width, eta_d=s.hyper.eta_d,
                          eta_g=s.hyper.eta_g, lam=s.hyper.lam)


# ===============================
# PARTITIONING
# ===============================

def partition_isolated(s: Scenario, eps: Optional[float] = None) -> NeighborhoodPartition:
    """
    Assign each generated point to its nearest true point (ties to the lowest index)
    and measure how isolated the resulting regions are.

    kernel_floor is the largest kernel value between points of distinct regions
    (a region being a true point together with its assigned generated points).
    """
    eps = float(eps if eps is not None else get_numerics_config()['isolation_eps'])
    X, G = s.real.X, s.generated.X
    sq = ((G[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
    nearest = np.argmin(sq, axis=1)
    assignments = {int(j): int(i) for j, i in enumerate(nearest)}

    floor = 0.0
    if X.shape[0] > 1:
        points = np.vstack([X, G])
        labels = np.concatenate([np.arange(X.shape[0]), nearest])
        K = gram(s.kernel, points, points)
        cross = labels[:, None] != labels[None, :]
        floor = float(K[cross].max()) if cross.any() else 0.0

    part = NeighborhoodPartition(assignments=assignments, separation_ok=floor <= eps,
                                 kernel_floor=floor, eps=eps, n_regions=int(X.shape[0]))
    logger.debug("Partitioned scenario", regions=part.n_regions,
                 kernel_floor=f"{floor:.3e}", separation_ok=part.separation_ok)
    return part


def delta_i(s: Scenario, part: NeighborhoodPartition, i: int) -> float:
    """Mass gap of region i: p_i minus the generated mass assigned to it."""
    if not 0 <= i < part.n_regions:
        raise IndexError(f"region {i} does not exist")
    return float(s.real.weights[i] - sum(s.generated.weights[j] for j in part.members(i)))


def region_masses(s: Scenario, part: NeighborhoodPartition) -> List[RegionMass]:
    return [
        RegionMass(index=i, p=s.real.weights[i], n_gen=len(part.members(i)),
                   weights=[s.generated.weights[j] for j in part.members(i)])
        for i in range(part.n_regions)
    ]


def equilibrium_points(s: Scenario, part: NeighborhoodPartition) -> np.ndarray:
    """Generated positions with every point moved onto its assigned true point."""
    X = s.real.X
    return np.array([X[part.assignments[j]] for j in range(s.generated.count)], dtype=float)


def offset_scenario(s: Scenario, part: NeighborhoodPartition, offset: float,
                    direction: Union[Sequence[float], np.ndarray]) -> Scenario:
    """
    Place every generated point at x_i + offset * sigma * u.

    `direction` is one vector shared by all points or one row per generated point;
    rows are normalized to unit length.
    """
    U = np.atleast_2d(np.asarray(direction, dtype=float))
    if U.shape[1] != s.dimension:
        raise DimensionMismatchError(s.dimension, U.shape[1], "direction")
    norms = np.linalg.norm(U, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("direction must be non-zero")
    U = np.broadcast_to(U / norms, (s.generated.count, s.dimension))
    return with_generated(s, equilibrium_points(s, part) + offset * s.sigma * U)


def region_scenario(s: Scenario, part: NeighborhoodPartition, i: int) -> Scenario:
    """Sub-scenario holding x_i and the generated points of N_i only."""
    members = part.members(i)
    if not members:
        raise ValueError(f"region {i} has no generated points")
    return build_scenario(s.real.X[i:i + 1], [s.real.weights[i]],
                          s.generated.X[members], [s.generated.weights[j] for j in members],
                          width=s.kernel.width, eta_d=s.hyper.eta_d,
                          eta_g=s.hyper.eta_g, lam=s.hyper.lam)
