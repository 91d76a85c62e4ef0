"""Functional records sampled on a time grid in [0, 1], their finite-dimensional
projections, and a per-sample Laplace sanitiser certified through its projections.

A record is one row of the database, so a whole record may change between
neighbours: the sensitivity used for calibration is the L1 record diameter
k * (hi - lo). Applying the one-dimensional Laplace triangle-inequality argument
coordinate by coordinate gives the density-ratio bound
exp(sum_j |f(t_j) - g(t_j)| / b) <= e^epsilon / (1 - delta) once b reaches
``functional_laplace_scale``. Cylinder sets generate the Borel sets of the
continuum, so certifying every projection certifies the whole mechanism.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from mechanism import PrivacyParams, laplace_scale
from utils import PROJECTION_CAPACITY, TOLERANCE, SpecError, read_functional_csv, require_capacity

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridFunction:
    """Samples of a record at the grid points, checked against ``space`` when one is given"""
    values: Tuple[float, ...]
    space: Optional["GridFunctionSpace"] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if not values:
            raise SpecError("a grid function needs at least one sample")
        if not all(math.isfinite(v) for v in values):
            raise SpecError(f"samples must be finite, got {list(values)}")
        if self.space is not None:
            if len(values) != self.space.k:
                raise SpecError(f"expected {self.space.k} samples, got {len(values)}")
            outside = [j + 1 for j, v in enumerate(values) if not self.space.lo <= v <= self.space.hi]
            if outside:
                raise SpecError(f"samples at grid positions {outside} lie outside [{self.space.lo}, {self.space.hi}]")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class GridFunctionSpace:
    grid: Tuple[float, ...]
    lo: float
    hi: float

    def __post_init__(self):
        grid = tuple(float(t) for t in self.grid)
        if not grid:
            raise SpecError("the grid needs at least one time point")
        if grid[0] < 0.0 or grid[-1] > 1.0:
            raise SpecError(f"grid times must lie in [0, 1], got {grid[0]} .. {grid[-1]}")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise SpecError("grid times must be strictly increasing")
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise SpecError(f"need finite lo < hi, got [{self.lo}, {self.hi}]")
        object.__setattr__(self, "grid", grid)

    @property
    def k(self) -> int:
        return len(self.grid)

    @property
    def record_diameter(self) -> float:
        """Largest L1 distance between two records"""
        return self.k * (self.hi - self.lo)

    def make_function(self, values: Sequence[float]) -> GridFunction:
        """Clip raw samples to [lo, hi] on ingestion"""
        raw = np.asarray(values, dtype=float)
        if raw.shape != (self.k,):
            raise SpecError(f"expected {self.k} samples, got {raw.size}")
        clipped = np.clip(raw, self.lo, self.hi)
        if np.any(clipped != raw):
            logger.warning(f"clipped {int(np.sum(clipped != raw))} sample(s) to [{self.lo}, {self.hi}]")
        return GridFunction(tuple(float(v) for v in clipped), self)

    def sup_distance(self, f: GridFunction, g: GridFunction) -> float:
        return float(np.max(np.abs(f.as_array() - g.as_array())))

    def l1_distance(self, f: GridFunction, g: GridFunction) -> float:
        return float(np.sum(np.abs(f.as_array() - g.as_array())))


def _check_indices(indices: Sequence[int], k: int) -> List[int]:
    indices = [int(i) for i in indices]
    if not indices:
        raise SpecError("projection indices must be nonempty")
    for i in indices:
        if not 1 <= i <= k:
            raise SpecError(f"projection index {i} is outside 1..{k}")
    if any(b <= a for a, b in zip(indices, indices[1:])):
        raise SpecError(f"projection indices must be strictly increasing, got {indices}")
    return indices


def project(f: GridFunction, indices: Sequence[int]) -> List[float]:
    """Samples of f at the chosen grid positions (1-based)"""
    return [f.values[i - 1] for i in _check_indices(indices, len(f))]


def functional_laplace_scale(space: GridFunctionSpace, params: PrivacyParams) -> float:
    """Laplace scale calibrated to the L1 record diameter k * (hi - lo)"""
    return laplace_scale(space.record_diameter, params)


def sample_noise(b: float, k: int, draws: int, seed: int) -> np.ndarray:
    """draws x k Laplace(0, b) noise; coordinate j uses child j of the seed"""
    if not b > 0:
        raise SpecError(f"scale must be positive, got {b}")
    streams = np.random.SeedSequence(seed).spawn(k)
    return np.column_stack([np.random.default_rng(s).laplace(0.0, b, size=draws) for s in streams])


def sanitize_function(f: GridFunction, b: float, seed: int) -> List[float]:
    """f(t_j) plus independent Laplace(0, b) noise per grid point; the output is not clipped"""
    noise = sample_noise(b, len(f), 1, seed)[0]
    return (f.as_array() + noise).tolist()


def sanitize_records(records: Sequence[GridFunction], b: float, seed: int) -> List[List[float]]:
    """Sanitise every record of a functional database; record i uses child i of the seed"""
    streams = np.random.SeedSequence(seed).spawn(len(records))
    return [sanitize_function(f, b, int(s.generate_state(1)[0])) for f, s in zip(records, streams)]


@dataclass(frozen=True)
class ProjectionCertificate:
    indices: Tuple[int, ...]
    worst_case_ratio: float
    threshold: float
    certified: bool

    def to_dict(self) -> Dict[str, Any]:
        return {"indices": list(self.indices), "worst_case_ratio": self.worst_case_ratio,
                "threshold": self.threshold, "certified": self.certified}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ProjectionCertificate":
        return cls(tuple(data["indices"]), float(data["worst_case_ratio"]),
                   float(data["threshold"]), bool(data["certified"]))


def _safe_exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def certify_projection_dp(space: GridFunctionSpace, b: float, params: PrivacyParams,
                          indices: Sequence[int], tolerance: float = TOLERANCE) -> ProjectionCertificate:
    """Worst-case density ratio exp(|I| (hi - lo) / b) of the projection onto I against e^epsilon / (1 - delta)"""
    indices = _check_indices(indices, space.k)
    if not b > 0:
        raise SpecError(f"scale must be positive, got {b}")
    exponent = len(indices) * (space.hi - space.lo) / b
    if params.vacuous:
        allowed = math.inf
    else:
        allowed = params.epsilon - math.log1p(-params.delta)
    # compared in the log domain so the calibrated scale is not lost to rounding
    certified = exponent <= allowed + tolerance
    return ProjectionCertificate(indices=tuple(indices), worst_case_ratio=_safe_exp(exponent),
                                 threshold=_safe_exp(allowed), certified=certified)


def certify_all_projections(space: GridFunctionSpace, b: float, params: PrivacyParams,
                            tolerance: float = TOLERANCE) -> List[ProjectionCertificate]:
    """Certificates for every nonempty index subset, smallest subsets first"""
    require_capacity("grid size k", space.k, PROJECTION_CAPACITY, "2^k projections would be enumerated")
    positions = range(1, space.k + 1)
    return [certify_projection_dp(space, b, params, subset, tolerance)
            for size in positions for subset in itertools.combinations(positions, size)]


def load_functional_database(path: str, lo: float, hi: float) -> Tuple[GridFunctionSpace, List[GridFunction]]:
    """Read a functional CSV: grid times first, then one record per row"""
    grid, values = read_functional_csv(path)
    space = GridFunctionSpace(tuple(grid), lo, hi)
    if values.shape[1] != space.k:
        raise SpecError(f"records have {values.shape[1]} samples but the grid has {space.k}", path)
    return space, [space.make_function(row) for row in values]
