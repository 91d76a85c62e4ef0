"""Mechanisms: finite stochastic kernels, randomized response, the calibrated
Laplace mechanism, product sanitisers over D^n, sampling, query pushforward and
output perturbation.

Randomness contract: every sampler takes an integer seed and splits it with
``numpy.random.SeedSequence(seed).spawn(count)``; row (or coordinate) i always
draws from child i, so results do not depend on iteration order.
"""

import functools
import logging
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import laplace

from metric_core import Database, FiniteMetricSpace, load_space
from utils import (
    PUSHFORWARD_CAPACITY,
    STOCHASTIC_TOLERANCE,
    SpecError,
    load_json,
    privacy_factor,
    require_capacity,
    require_field,
    require_list,
)

logger = logging.getLogger(__name__)

# each cached fiber map holds |U|^n int64 entries
FIBER_CACHE_SIZE = 4


class KernelError(SpecError):
    """A probability matrix is not a valid stochastic kernel"""


class CalibrationError(ValueError):
    """Privacy parameters admit no finite calibration"""


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        epsilon, delta = float(self.epsilon), float(self.delta)
        if math.isnan(epsilon) or epsilon < 0:
            raise SpecError(f"epsilon must be >= 0, got {self.epsilon}")
        if math.isnan(delta) or not 0.0 <= delta <= 1.0:
            raise SpecError(f"delta must lie in [0, 1], got {self.delta}")
        object.__setattr__(self, "epsilon", epsilon)
        object.__setattr__(self, "delta", delta)

    @property
    def factor(self) -> float:
        """e^epsilon"""
        return privacy_factor(self.epsilon)

    @property
    def vacuous(self) -> bool:
        """With delta = 1 every mechanism is private"""
        return self.delta >= 1.0

    def to_dict(self) -> Dict[str, float]:
        return {"epsilon": self.epsilon, "delta": self.delta}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PrivacyParams":
        return cls(epsilon=data["epsilon"], delta=data.get("delta", 0.0))


@dataclass(frozen=True, eq=False)
class FiniteKernel:
    """probs[d][y] = P(X_d = y) for d in the input space D and y in the output space U"""
    input_space: FiniteMetricSpace
    probs: np.ndarray
    output_space: Optional[FiniteMetricSpace] = None

    def __post_init__(self):
        output_space = self.output_space if self.output_space is not None else self.input_space
        probs = np.array(self.probs, dtype=float)
        expected = (self.input_space.size, output_space.size)
        if probs.shape != expected:
            raise KernelError(f"probability matrix has shape {probs.shape}, expected {expected}")
        bad = np.argwhere(~((probs >= 0.0) & (probs <= 1.0)))
        if bad.size:
            d, y = bad[0]
            raise KernelError(f"probs[{d}][{y}] = {probs[d, y]} is not a probability")
        sums = probs.sum(axis=1)
        off = np.argwhere(np.abs(sums - 1.0) > STOCHASTIC_TOLERANCE)
        if off.size:
            d = int(off[0][0])
            raise KernelError(f"row {d} ('{self.input_space.labels[d]}') sums to {sums[d]!r}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "output_space", output_space)
        object.__setattr__(self, "probs", probs)

    @property
    def input_size(self) -> int:
        return self.input_space.size

    @property
    def output_size(self) -> int:
        return self.output_space.size

    def row(self, d: int) -> np.ndarray:
        """Law of X_d"""
        return self.probs[d]

    def embedding(self) -> List[int]:
        """Output index of each input point (D is a subset of U, matched by label)"""
        if self.output_space is self.input_space:
            return list(range(self.input_size))
        try:
            return [self.output_space.index_of(label) for label in self.input_space.labels]
        except SpecError as e:
            raise SpecError(f"input space is not contained in the output space: {e}") from e

    def to_dict(self) -> Dict[str, Any]:
        data = {"input_space": self.input_space.to_dict(), "probs": self.probs.tolist()}
        if self.output_space is not self.input_space:
            data["output_space"] = self.output_space.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: Optional[str] = None,
                  location: str = "kernel") -> "FiniteKernel":
        kind = data.get("kind", "matrix") if isinstance(data, dict) else None
        if kind == "rr":
            space = load_space(require_field(data, "space", location), base_dir, f"{location}.space")
            p = require_field(data, "p", location)
            if isinstance(p, bool) or not isinstance(p, (int, float)):
                raise SpecError(f"expected a number, got {type(p).__name__}", f"{location}.p")
            return rr_kernel(space, float(p), strict=bool(data.get("strict", True)))
        if kind != "matrix":
            raise SpecError(f"unknown kernel kind '{kind}'", f"{location}.kind")
        input_space = load_space(require_field(data, "input_space", location), base_dir, f"{location}.input_space")
        output_space = None
        if data.get("output_space") is not None:
            output_space = load_space(data["output_space"], base_dir, f"{location}.output_space")
        probs = require_list(data, "probs", location, nested=True)
        try:
            return cls(input_space=input_space, probs=probs, output_space=output_space)
        except KernelError as e:
            raise KernelError(str(e), f"{location}.probs") from e


def load_kernel(spec: Any, base_dir: Optional[str] = None) -> FiniteKernel:
    """Load a kernel from a spec mapping or a JSON file path"""
    if isinstance(spec, str):
        data = load_json(spec)
        return FiniteKernel.from_dict(data, base_dir=os.path.dirname(os.path.abspath(spec)), location=spec)
    return FiniteKernel.from_dict(spec, base_dir=base_dir)


def rr_kernel(space: FiniteMetricSpace, p: float, strict: bool = True) -> FiniteKernel:
    """Randomized response: keep the true point with probability 1 - pm, move to each other point with p.

    The usual assumption is 1 - pm > p; ``strict=False`` also admits the uniform
    boundary 1 - pm = p.
    """
    m = space.size - 1
    if m < 1:
        raise SpecError("randomized response needs at least 2 points")
    keep = 1.0 - p * m
    if not p > 0:
        raise CalibrationError(f"p must be positive, got {p}")
    if keep < p or (strict and keep <= p):
        relation = ">" if strict else ">="
        raise CalibrationError(f"p = {p} violates 1 - pm {relation} p for m = {m} (1 - pm = {keep})")
    if keep == p:
        logger.warning(f"rr kernel at the boundary 1 - pm = p = {p}: every row is uniform")
    probs = np.full((space.size, space.size), p)
    np.fill_diagonal(probs, keep)
    return FiniteKernel(input_space=space, probs=probs)


def rr_min_p(m: int, params: PrivacyParams) -> float:
    """Smallest p making randomized response over m + 1 points (epsilon, delta)-DP"""
    if m < 1:
        raise SpecError(f"m must be at least 1, got {m}")
    return (1.0 - params.delta) / (m + params.factor)


def laplace_scale(diam: float, params: PrivacyParams) -> float:
    """b = diam / (epsilon - log(1 - delta))"""
    if not diam > 0:
        raise CalibrationError(f"diameter must be positive, got {diam}")
    if params.vacuous:
        raise CalibrationError("delta = 1 makes every mechanism private; there is nothing to calibrate")
    denominator = params.epsilon - math.log1p(-params.delta)
    if denominator <= 0:
        raise CalibrationError("epsilon = 0 and delta = 0 admit no finite Laplace scale")
    b = diam / denominator
    logger.info(f"Laplace scale b = {b:.6g} for diam {diam}, epsilon {params.epsilon}, delta {params.delta}")
    return b


def laplace_event_prob(center: float, b: float, lo_a: float, hi_a: float) -> float:
    """Mass of the Laplace(center, b) law on the interval [lo_a, hi_a] (infinite ends allowed)"""
    if not b > 0:
        raise CalibrationError(f"scale must be positive, got {b}")
    if lo_a > hi_a:
        raise SpecError(f"empty interval [{lo_a}, {hi_a}]")
    if lo_a >= center:
        # right tail: survival function keeps precision
        return float(laplace.sf(lo_a, loc=center, scale=b) - laplace.sf(hi_a, loc=center, scale=b))
    return float(laplace.cdf(hi_a, loc=center, scale=b) - laplace.cdf(lo_a, loc=center, scale=b))


@dataclass(frozen=True)
class LaplaceMechanism:
    """X_d = d + L with L ~ Laplace(0, b), for data in the bounded interval [lo, hi]"""
    lo: float
    hi: float
    b: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise SpecError(f"need finite lo < hi, got [{self.lo}, {self.hi}]")
        if not self.b > 0:
            raise CalibrationError(f"scale must be positive, got {self.b}")

    @property
    def diam(self) -> float:
        return self.hi - self.lo

    @classmethod
    def calibrated(cls, lo: float, hi: float, params: PrivacyParams) -> "LaplaceMechanism":
        return cls(lo=lo, hi=hi, b=laplace_scale(hi - lo, params))

    def density(self, x: float, d: float) -> float:
        return math.exp(-abs(x - d) / self.b) / (2.0 * self.b)

    def event_prob(self, d: float, lo_a: float, hi_a: float) -> float:
        return laplace_event_prob(d, self.b, lo_a, hi_a)

    def sample(self, values: Sequence[float], seed: int) -> np.ndarray:
        """Sanitise each value with its own noise stream"""
        values = np.asarray(values, dtype=float)
        if np.any((values < self.lo) | (values > self.hi)):
            raise SpecError(f"values must lie in [{self.lo}, {self.hi}]")
        streams = np.random.SeedSequence(seed).spawn(values.size)
        noise = np.array([np.random.default_rng(s).laplace(0.0, self.b) for s in streams])
        return values + noise

    def to_dict(self) -> Dict[str, float]:
        return {"lo": self.lo, "hi": self.hi, "b": self.b}


def format_response(response: Any) -> str:
    """Stable text form of a query response (also the label lookup key for output perturbation)"""
    if isinstance(response, str):
        return response
    if isinstance(response, (tuple, list)):
        return ",".join(format_response(r) for r in response)
    return str(response)


@dataclass(frozen=True, eq=False)
class FiniteQuery:
    """Q: U^n -> E_Q, evaluated on tuples of output-space indices"""
    name: str
    func: Callable[[Tuple[int, ...]], Hashable] = field(repr=False)

    def __call__(self, outcome: Sequence[int]) -> Hashable:
        return self.func(tuple(outcome))

    @classmethod
    def identity(cls, space: FiniteMetricSpace) -> "FiniteQuery":
        return cls("identity", lambda u: tuple(space.labels[i] for i in u))

    @classmethod
    def count(cls, space: FiniteMetricSpace, label: str) -> "FiniteQuery":
        target = space.parse_point(label)
        return cls(f"count[{label}]", lambda u: sum(1 for i in u if i == target))

    @classmethod
    def mode(cls, space: FiniteMetricSpace) -> "FiniteQuery":
        def most_common(u):
            counts = Counter(u)
            # ties go to the smallest point index
            best = min(counts, key=lambda i: (-counts[i], i))
            return space.labels[best]
        return cls("mode", most_common)

    @classmethod
    def histogram(cls, space: FiniteMetricSpace) -> "FiniteQuery":
        size = space.size
        return cls("histogram", lambda u: tuple(np.bincount(np.asarray(u, dtype=int), minlength=size).tolist()))

    @classmethod
    def top_k(cls, space: FiniteMetricSpace, k: int) -> "FiniteQuery":
        if k < 1:
            raise SpecError(f"top_k needs k >= 1, got {k}")

        def most_common(u):
            counts = Counter(u)
            ranked = sorted(counts, key=lambda i: (-counts[i], i))[:k]
            return tuple(space.labels[i] for i in sorted(ranked))
        return cls(f"top_{k}", most_common)

    @classmethod
    def count_any(cls, space: FiniteMetricSpace, elements: Sequence[str]) -> "FiniteQuery":
        """Rows whose subset meets ``elements`` (power-set spaces)"""
        if not space.is_powerset:
            raise SpecError("count_any needs a power-set space")
        target = space.parse_point(";".join(elements))
        return cls(f"count_any[{';'.join(elements)}]", lambda u: sum(1 for i in u if i & target))

    @classmethod
    def constant(cls, value: Hashable) -> "FiniteQuery":
        return cls(f"constant[{value}]", lambda u: value)

    @classmethod
    def table(cls, space: FiniteMetricSpace, mapping: Dict[str, Hashable]) -> "FiniteQuery":
        """Extensional query keyed by comma-joined output labels"""
        def lookup(u):
            key = ",".join(space.labels[i] for i in u)
            if key not in mapping:
                raise SpecError(f"table query has no entry for '{key}'")
            return mapping[key]
        return cls("table", lookup)


def query_from_spec(spec: Dict[str, Any], space: FiniteMetricSpace, location: str = "query") -> FiniteQuery:
    """Build a query over ``space`` from its JSON spec"""
    kind = require_field(spec, "kind", location)
    if kind == "identity":
        return FiniteQuery.identity(space)
    if kind == "count":
        label = require_field(spec, "label", location)
        if not isinstance(label, str):
            raise SpecError(f"expected a string, got {type(label).__name__}", f"{location}.label")
        return FiniteQuery.count(space, label)
    if kind == "mode":
        return FiniteQuery.mode(space)
    if kind == "histogram":
        return FiniteQuery.histogram(space)
    if kind == "top_k":
        return FiniteQuery.top_k(space, int(require_field(spec, "k", location)))
    if kind == "count_any":
        return FiniteQuery.count_any(space, [str(e) for e in require_list(spec, "elements", location)])
    if kind == "constant":
        return FiniteQuery.constant(require_field(spec, "value", location))
    if kind == "table":
        mapping = require_field(spec, "map", location)
        if not isinstance(mapping, dict):
            raise SpecError("expected a JSON object", f"{location}.map")
        return FiniteQuery.table(space, mapping)
    raise SpecError(f"unknown query kind '{kind}'", f"{location}.kind")


@dataclass(frozen=True, eq=False)
class ProductMechanism:
    """n independent copies of ``base``, one per database row"""
    base: FiniteKernel
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise SpecError(f"a product mechanism needs n >= 1 rows, got {self.n}")

    @property
    def outcome_count(self) -> int:
        return self.base.output_size ** self.n

    def law_of_rows(self, rows: Sequence[int]) -> np.ndarray:
        """Law on U^n, flattened in itertools.product order (first row most significant)"""
        if len(rows) != self.n:
            raise SpecError(f"expected {self.n} rows, got {len(rows)}")
        require_capacity("|U|^n", self.outcome_count, PUSHFORWARD_CAPACITY,
                         "use a Monte Carlo estimate instead")
        law = np.ones(1)
        for r in rows:
            law = np.multiply.outer(law, self.base.probs[r]).ravel()
        return law

    def law(self, db: Database) -> np.ndarray:
        _check_database(self, db)
        return self.law_of_rows(db.rows)

    def marginal(self, law: np.ndarray, position: int) -> np.ndarray:
        """Law of the row at ``position`` under a joint law on U^n"""
        shape = (self.base.output_size,) * self.n
        axes = tuple(a for a in range(self.n) if a != position)
        return law.reshape(shape).sum(axis=axes)


def product_kernel(base: FiniteKernel, n: int) -> ProductMechanism:
    """Sanitise each of n rows independently with ``base``"""
    return ProductMechanism(base=base, n=n)


def _check_database(mech: ProductMechanism, db: Database) -> None:
    if not db.space.same_points(mech.base.input_space):
        raise SpecError("database is not over the mechanism's input space")
    if db.n != mech.n:
        raise SpecError(f"database has {db.n} rows but the mechanism sanitises {mech.n}")


def new_seed() -> int:
    """Fresh entropy for randomized commands that were not given a seed"""
    seed = int(np.random.SeedSequence().entropy % (2 ** 63))
    logger.info(f"Generated seed {seed}")
    return seed


def sample_many(mech: ProductMechanism, db: Database, draws: int, seed: int) -> np.ndarray:
    """``draws`` independent sanitisations of ``db`` as a draws x n array of output indices"""
    _check_database(mech, db)
    streams = np.random.SeedSequence(seed).spawn(mech.n)
    out = np.empty((draws, mech.n), dtype=np.int64)
    for position, (r, stream) in enumerate(zip(db.rows, streams)):
        rng = np.random.default_rng(stream)
        out[:, position] = rng.choice(mech.base.output_size, size=draws, p=mech.base.probs[r])
    return out


def sample(mech: ProductMechanism, db: Database, seed: int) -> Database:
    """One sanitised database over the output space"""
    rows = sample_many(mech, db, 1, seed)[0]
    return Database(mech.base.output_space, tuple(int(r) for r in rows))


@dataclass(frozen=True)
class ResponseDistribution:
    """Law of a query response; probs aligned with responses"""
    responses: Tuple[Hashable, ...]
    probs: Tuple[float, ...]
    exact: bool = True
    std_error: Optional[float] = None

    def prob(self, response: Hashable) -> float:
        try:
            return self.probs[self.responses.index(response)]
        except ValueError:
            return 0.0

    def as_dict(self) -> Dict[str, float]:
        """Probabilities keyed by the text form of each response"""
        return {format_response(r): p for r, p in zip(self.responses, self.probs)}

    def to_dict(self) -> Dict[str, Any]:
        items = [{"response": _response_to_json(r), "prob": p} for r, p in zip(self.responses, self.probs)]
        return {"distribution": items, "exact": self.exact, "std_error": self.std_error}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ResponseDistribution":
        items = data["distribution"]
        return cls(tuple(_response_from_json(item["response"]) for item in items),
                   tuple(float(item["prob"]) for item in items),
                   exact=bool(data.get("exact", True)), std_error=data.get("std_error"))


def _response_to_json(response: Any) -> Any:
    """Tuples become arrays; numpy scalars become plain numbers"""
    if isinstance(response, (tuple, list)):
        return [_response_to_json(r) for r in response]
    if isinstance(response, np.generic):
        return response.item()
    return response


def _response_from_json(value: Any) -> Hashable:
    if isinstance(value, list):
        return tuple(_response_from_json(v) for v in value)
    return value


@functools.lru_cache(maxsize=FIBER_CACHE_SIZE)
def response_fibers(q: FiniteQuery, output_size: int, n: int) -> Tuple[Tuple[Hashable, ...], np.ndarray]:
    """Responses of ``q`` over U^n (first-appearance order) and each outcome's response index"""
    require_capacity("|U|^n", output_size ** n, PUSHFORWARD_CAPACITY,
                     "use pushforward(..., method='monte_carlo')")
    index: Dict[Hashable, int] = {}
    inverse = np.empty(output_size ** n, dtype=np.int64)
    for flat, outcome in enumerate(np.ndindex(*(output_size,) * n)):
        response = q(outcome)
        inverse[flat] = index.setdefault(response, len(index))
    logger.debug(f"query {q.name}: {len(index)} responses over {output_size ** n} outcomes")
    inverse.setflags(write=False)
    return tuple(index), inverse


def pushforward(mech: ProductMechanism, db: Database, q: FiniteQuery, method: str = "exact",
                draws: int = 100_000, seed: Optional[int] = None) -> ResponseDistribution:
    """Law of Q(X_d): exact fiber sums, or a Monte Carlo estimate with its standard error"""
    _check_database(mech, db)
    if method == "exact":
        responses, inverse = response_fibers(q, mech.base.output_size, mech.n)
        probs = np.bincount(inverse, weights=mech.law_of_rows(db.rows), minlength=len(responses))
        return ResponseDistribution(responses, tuple(float(p) for p in probs))
    if method != "monte_carlo":
        raise SpecError(f"unknown pushforward method '{method}'")
    if seed is None:
        seed = new_seed()
    outcomes = sample_many(mech, db, draws, seed)
    counts = Counter(q(row) for row in map(tuple, outcomes.tolist()))
    responses = tuple(sorted(counts, key=format_response))
    probs = tuple(counts[r] / draws for r in responses)
    std_error = max(math.sqrt(p * (1.0 - p) / draws) for p in probs)
    logger.info(f"Monte Carlo pushforward of {q.name} from {draws} draws (max std error {std_error:.2g})")
    return ResponseDistribution(responses, probs, exact=False, std_error=std_error)


@dataclass(frozen=True, eq=False)
class OutputPerturbation:
    """X_{Q,d} = X_{Q(d)}: the response kernel randomizes the true query answer"""
    query: FiniteQuery
    response_kernel: FiniteKernel
    data_space: Optional[FiniteMetricSpace] = None

    def true_response(self, db: Database) -> Hashable:
        space = self.data_space or db.space
        rows = db.rows
        if not db.space.same_points(space):
            rows = tuple(space.index_of(label) for label in db.labels())
        return self.query(rows)

    def response_index(self, db: Database) -> int:
        response = format_response(self.true_response(db))
        try:
            return self.response_kernel.input_space.index_of(response)
        except SpecError as e:
            raise SpecError(f"query response '{response}' is not in the response kernel's input space") from e

    def law(self, db: Database) -> ResponseDistribution:
        row = self.response_kernel.row(self.response_index(db))
        return ResponseDistribution(self.response_kernel.output_space.labels, tuple(float(p) for p in row))

    def answer(self, db: Database, seed: int) -> str:
        """A fresh noisy answer; repeated calls with new seeds can be averaged"""
        rng = np.random.default_rng(seed)
        y = rng.choice(self.response_kernel.output_size, p=self.response_kernel.row(self.response_index(db)))
        return self.response_kernel.output_space.labels[int(y)]


def output_perturbation(q: FiniteQuery, response_kernel: FiniteKernel,
                        data_space: Optional[FiniteMetricSpace] = None) -> OutputPerturbation:
    """Perturb the answer Q(d) with ``response_kernel`` (input space E_Q)"""
    return OutputPerturbation(query=q, response_kernel=response_kernel, data_space=data_space)


@dataclass(frozen=True)
class SanitisedRelease:
    """A database sanitised once; every query is answered from it"""
    database: Database
    seed: int

    def answer(self, q: FiniteQuery) -> Hashable:
        return q(self.database.rows)

    def to_dict(self) -> Dict[str, Any]:
        return {"rows": self.database.labels(), "seed": self.seed}


def release(mech: ProductMechanism, db: Database, seed: Optional[int] = None) -> SanitisedRelease:
    """Non-interactive release: sanitise the whole database once"""
    if seed is None:
        seed = new_seed()
    return SanitisedRelease(sample(mech, db, seed), seed)
