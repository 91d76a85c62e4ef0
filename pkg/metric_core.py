"""Finite metric spaces, databases over them, and the Hamming neighbour relation."""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from utils import (
    AXIOM_TOLERANCE,
    POWERSET_CAPACITY,
    POWERSET_MEMORY_HINT,
    CapacityError,
    SpecError,
    bitmask_members,
    load_json,
    read_label_column,
    require_list,
    resolve_path,
)

logger = logging.getLogger(__name__)


class MetricAxiomError(SpecError):
    """A distance matrix breaks one of the metric axioms"""

    def __init__(self, axiom: str, indices: Tuple[int, ...], detail: str = ""):
        self.axiom = axiom
        self.indices = indices
        message = f"{axiom} violated at indices {indices}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class FiniteMetricSpace:
    """Labelled point set with a full distance matrix.

    Points are addressed by position; labels are only used for I/O. Power-set
    spaces also keep their universe so that 'h1;h3' style records can be parsed,
    and their point i is the subset with bitmask i.
    """
    labels: Tuple[str, ...]
    dist: np.ndarray
    universe: Optional[Tuple[str, ...]] = None
    _index: Dict[str, int] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        labels = tuple(str(label) for label in self.labels)
        dist = np.asarray(self.dist)
        # small unsigned counts (power-set distances) stay narrow; everything else is copied as float
        if not np.issubdtype(dist.dtype, np.unsignedinteger):
            dist = np.array(dist, dtype=float)
        if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
            raise SpecError(f"distance matrix must be square, got shape {dist.shape}")
        if dist.shape[0] != len(labels):
            raise SpecError(f"distance matrix has dimension {dist.shape[0]} but {len(labels)} labels were given")
        seen: Dict[str, int] = {}
        for i, label in enumerate(labels):
            if label in seen:
                raise SpecError(f"duplicate label '{label}' at indices {(seen[label], i)}")
            seen[label] = i
        dist.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "dist", dist)
        object.__setattr__(self, "_index", seen)

    @property
    def size(self) -> int:
        return len(self.labels)

    @property
    def is_powerset(self) -> bool:
        return self.universe is not None

    def index_of(self, label: str) -> int:
        """Position of a point given its label"""
        if label not in self._index:
            raise SpecError(f"unknown point '{label}'")
        return self._index[label]

    def parse_point(self, text: str) -> int:
        """Position of a point given a record field ('h3;h1' accepted for power-set spaces)"""
        if self.universe is None:
            return self.index_of(text)
        mask = 0
        for element in (part.strip() for part in text.split(";")):
            if not element:
                continue
            if element not in self.universe:
                raise SpecError(f"'{element}' is not an element of the universe {list(self.universe)}")
            mask |= 1 << self.universe.index(element)
        return mask

    def distance(self, i: int, j: int) -> float:
        return float(self.dist[i, j])

    def same_points(self, other: "FiniteMetricSpace") -> bool:
        return self is other or self.labels == other.labels

    def validate_axioms(self, tolerance: float = AXIOM_TOLERANCE) -> None:
        """Check identity of indiscernibles, symmetry and the triangle inequality"""
        dist = self.dist.astype(float, copy=False)
        n = self.size
        if np.any(~np.isfinite(dist)):
            i, j = np.argwhere(~np.isfinite(dist))[0]
            raise MetricAxiomError("finiteness", (int(i), int(j)), f"entry {dist[i, j]}")
        negative = np.argwhere(dist < 0)
        if negative.size:
            i, j = negative[0]
            raise MetricAxiomError("non-negativity", (int(i), int(j)), f"entry {dist[i, j]}")
        for i in range(n):
            if dist[i, i] != 0.0:
                raise MetricAxiomError("identity of indiscernibles", (i, i), f"dist[{i}][{i}] = {dist[i, i]}")
        off_diagonal = ~np.eye(n, dtype=bool)
        zero = np.argwhere((dist <= 0) & off_diagonal)
        if zero.size:
            i, j = zero[0]
            raise MetricAxiomError("identity of indiscernibles", (int(i), int(j)),
                                   "distinct points at distance 0")
        asymmetric = np.argwhere(np.abs(dist - dist.T) > tolerance)
        if asymmetric.size:
            i, j = asymmetric[0]
            raise MetricAxiomError("symmetry", (int(i), int(j)),
                                   f"dist[{i}][{j}] = {dist[i, j]} but dist[{j}][{i}] = {dist[j, i]}")
        # one intermediate point at a time keeps memory at O(n^2)
        for j in range(n):
            detour = dist[:, j:j + 1] + dist[j:j + 1, :]
            broken = np.argwhere(dist > detour + tolerance)
            if broken.size:
                i, k = broken[0]
                raise MetricAxiomError(
                    "triangle inequality", (int(i), j, int(k)),
                    f"dist[{i}][{k}] = {dist[i, k]} > dist[{i}][{j}] + dist[{j}][{k}] = {detour[i, k]}")

    def to_dict(self) -> Dict[str, Any]:
        if self.universe is not None:
            return {"kind": "powerset", "universe": list(self.universe)}
        return {"labels": list(self.labels), "dist": self.dist.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any], location: str = "space") -> "FiniteMetricSpace":
        """Build a space from a spec mapping (explicit matrix, discrete or powerset)"""
        kind = data.get("kind", "matrix") if isinstance(data, dict) else None
        if kind == "discrete":
            return discrete_metric_space(require_list(data, "labels", location))
        if kind == "powerset":
            return symmetric_difference_space(require_list(data, "universe", location))
        if kind == "matrix":
            return build_finite_space(require_list(data, "labels", location),
                                      require_list(data, "dist", location, nested=True))
        raise SpecError(f"unknown space kind '{kind}'", f"{location}.kind")

    def __str__(self) -> str:
        return f"FiniteMetricSpace({self.size} points: {', '.join(self.labels[:6])}{', ...' if self.size > 6 else ''})"


@dataclass(frozen=True)
class SpaceStats:
    diam: float
    kappa: float
    m: int

    def to_dict(self) -> Dict[str, Any]:
        return {"diam": self.diam, "kappa": self.kappa, "m": self.m}


@dataclass(frozen=True, eq=False)
class Database:
    """Ordered rows, each a point index of ``space``"""
    space: FiniteMetricSpace
    rows: Tuple[int, ...]

    def __post_init__(self):
        rows = tuple(int(r) for r in self.rows)
        if len(rows) < 1:
            raise SpecError("a database needs at least one row")
        for position, r in enumerate(rows):
            if not 0 <= r < self.space.size:
                raise SpecError(f"row {position} refers to point {r}, outside a space of {self.space.size} points")
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return len(self.rows)

    def labels(self) -> List[str]:
        return [self.space.labels[r] for r in self.rows]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Database):
            return NotImplemented
        return self.rows == other.rows and self.space.same_points(other.space)

    def __hash__(self) -> int:
        return hash((self.rows, self.space.labels))

    @classmethod
    def from_labels(cls, space: FiniteMetricSpace, labels: Sequence[str]) -> "Database":
        return cls(space, tuple(space.parse_point(label) for label in labels))


def build_finite_space(labels: Sequence[str], dist: Sequence[Sequence[float]],
                       tolerance: float = AXIOM_TOLERANCE) -> FiniteMetricSpace:
    """Build a space from an explicit distance matrix after checking the metric axioms"""
    space = FiniteMetricSpace(tuple(labels), np.asarray(dist, dtype=float))
    space.validate_axioms(tolerance)
    logger.debug(f"Built {space}")
    return space


def discrete_metric_space(labels: Sequence[str]) -> FiniteMetricSpace:
    """rho(x, y) = 1 for x != y"""
    if len(labels) < 2:
        raise SpecError(f"the discrete metric needs at least 2 labels, got {len(labels)}")
    n = len(labels)
    return FiniteMetricSpace(tuple(labels), np.ones((n, n)) - np.eye(n))


def symmetric_difference_space(universe: Sequence[str]) -> FiniteMetricSpace:
    """All subsets of ``universe`` under rho(A, B) = |A symmetric-difference B|.

    Point i is the subset whose bitmask is i (bit j <-> universe[j]); its label
    joins the members with ';' and the empty set has the empty label.
    """
    universe = tuple(str(u) for u in universe)
    if not universe:
        raise SpecError("the universe must be nonempty")
    if len(set(universe)) != len(universe):
        raise SpecError(f"duplicate elements in universe {list(universe)}")
    if len(universe) > POWERSET_CAPACITY:
        raise CapacityError("universe size", len(universe), POWERSET_CAPACITY,
                            "2^u points need a dense 4^u-byte distance matrix (4 GiB at u = 16)")
    if len(universe) > POWERSET_MEMORY_HINT:
        logger.warning(f"universe of {len(universe)} elements: the distance matrix takes "
                       f"{4 ** len(universe) / 2 ** 30:.1f} GiB")
    size = 1 << len(universe)
    popcount = np.array([bin(mask).count("1") for mask in range(size)], dtype=np.uint8)
    masks = np.arange(size, dtype=np.uint32)
    # one row at a time so no size x size intermediate wider than uint8 is built
    dist = np.empty((size, size), dtype=np.uint8)
    for mask in range(size):
        dist[mask] = popcount[masks ^ mask]
    labels = tuple(";".join(universe[j] for j in bitmask_members(mask)) for mask in range(size))
    return FiniteMetricSpace(labels, dist, universe=universe)


def space_stats(space: FiniteMetricSpace) -> SpaceStats:
    """Diameter, minimum positive distance and m = |D| - 1"""
    if space.size < 2:
        raise SpecError("a single-point space has no positive distance (kappa undefined)")
    off_diagonal = space.dist[~np.eye(space.size, dtype=bool)]
    return SpaceStats(diam=float(off_diagonal.max()), kappa=float(off_diagonal.min()), m=space.size - 1)


def hamming(db: Database, db2: Database) -> int:
    """Number of positions where the rows differ; neighbours are at distance 1"""
    if db.n != db2.n:
        raise SpecError(f"databases have different lengths ({db.n} vs {db2.n})")
    if not db.space.same_points(db2.space):
        raise SpecError("databases are over different spaces")
    return sum(1 for a, b in zip(db.rows, db2.rows) if a != b)


def all_databases(size: int, n: int) -> Iterator[Tuple[int, ...]]:
    """Every row tuple of D^n in lexicographic order"""
    return itertools.product(range(size), repeat=n)


def neighbour_pairs(size: int, n: int) -> Iterator[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
    """Unordered neighbouring pairs of D^n: n * C(|D|, 2) * |D|^(n-1) of them"""
    for position in range(n):
        for rest in itertools.product(range(size), repeat=n - 1):
            for a, b in itertools.combinations(range(size), 2):
                left = rest[:position] + (a,) + rest[position:]
                right = rest[:position] + (b,) + rest[position:]
                yield left, right


def load_space(spec: Any, base_dir: Optional[str] = None, location: str = "space") -> FiniteMetricSpace:
    """Load a space from a spec mapping or a path to a JSON spec file"""
    if isinstance(spec, str):
        path = resolve_path(spec, base_dir)
        return FiniteMetricSpace.from_dict(load_json(path), location=path)
    return FiniteMetricSpace.from_dict(spec, location=location)


def load_database(path: str, space: FiniteMetricSpace) -> Database:
    """Read a database CSV (one label, or ';'-separated elements, per line)"""
    labels = read_label_column(path)
    rows = []
    for line, label in enumerate(labels, start=1):
        try:
            rows.append(space.parse_point(label))
        except SpecError as e:
            raise SpecError(str(e), f"{path}:{line}") from e
    return Database(space, tuple(rows))
