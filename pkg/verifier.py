"""Decide (epsilon, delta)-differential privacy of finite mechanisms.

Every check compares the laws of two inputs d, d' and looks for the event A
maximizing P(X_d in A) - e^epsilon P(X_d' in A) - delta. Because that gap is
additive over the outputs in A, the exhaustive checks tabulate it for every
bitmask event with one subset-sum pass, and the closed form takes A to be the
outputs where the gap is positive.
"""

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, FrozenSet, Hashable, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd

from mechanism import (
    FiniteKernel,
    FiniteQuery,
    LaplaceMechanism,
    OutputPerturbation,
    PrivacyParams,
    ProductMechanism,
    response_fibers,
)
from metric_core import Database, FiniteMetricSpace, all_databases, neighbour_pairs
from utils import (
    EVENT_CAPACITY,
    PRODUCT_EVENT_CAPACITY,
    RECTANGLE_CAPACITY,
    TOLERANCE,
    SpecError,
    bitmask_members,
    privacy_factor,
    require_capacity,
    scaled_mass,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Witness:
    """A pair of inputs and an event on which the DP inequality fails"""
    d: Any
    d_prime: Any
    event: List[int]
    lhs: float
    rhs: float

    def to_dict(self) -> Dict[str, Any]:
        return {"d": self.d, "d_prime": self.d_prime, "event": list(self.event),
                "lhs": self.lhs, "rhs": self.rhs}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Witness":
        return cls(d=data["d"], d_prime=data["d_prime"], event=list(data["event"]),
                   lhs=float(data["lhs"]), rhs=float(data["rhs"]))


@dataclass(frozen=True)
class VerificationReport:
    passed: bool
    witness: Optional[Witness]
    max_violation: float
    pairs_checked: int
    events_checked: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "passed": self.passed,
            "witness": self.witness.to_dict() if self.witness else None,
            "max_violation": self.max_violation,
            "pairs_checked": self.pairs_checked,
            "events_checked": self.events_checked,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "VerificationReport":
        witness = data.get("witness")
        return cls(
            passed=bool(data["passed"]),
            witness=Witness.from_dict(witness) if witness else None,
            max_violation=float(data["max_violation"]),
            pairs_checked=int(data["pairs_checked"]),
            events_checked=int(data["events_checked"]),
        )


def event_gaps(gaps: np.ndarray) -> np.ndarray:
    """Sum of ``gaps`` over every event, indexed by bitmask (bit y <-> output y)"""
    sums = np.zeros(1 << gaps.size)
    width = 1
    for gap in gaps:
        sums[width:2 * width] = sums[:width] + gap
        width <<= 1
    return sums


def _worst_event(p: np.ndarray, q: np.ndarray, factor: float, delta: float,
                 exhaustive: bool) -> Tuple[float, List[int]]:
    gaps = p - scaled_mass(factor, q)
    if exhaustive:
        sums = event_gaps(gaps)
        # argmax returns the first maximal mask in increasing order
        mask = int(np.argmax(sums))
        return float(sums[mask]) - delta, bitmask_members(mask)
    members = np.flatnonzero(gaps > 0).tolist()
    return float(gaps[members].sum()) - delta, members


def _check_laws(laws: Sequence[np.ndarray], pairs: List[Tuple[int, int]], params: PrivacyParams,
                exhaustive: bool, tolerance: float, threads: int,
                describe: Callable[[int], Any]) -> VerificationReport:
    """Check the DP inequality between laws[i] and laws[j] for every ordered (i, j) in ``pairs``"""
    factor = params.factor

    def evaluate(pair: Tuple[int, int]) -> Tuple[float, List[int]]:
        i, j = pair
        return _worst_event(laws[i], laws[j], factor, params.delta, exhaustive)

    if threads > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(evaluate, pairs))
    else:
        results = [evaluate(pair) for pair in pairs]

    best_pair, best_value, best_event = None, -math.inf, []
    for pair, (value, event) in zip(pairs, results):
        if value > best_value:
            best_pair, best_value, best_event = pair, value, event
    if best_pair is None:
        # a single input: only the empty comparison remains
        best_value = -params.delta

    size = len(laws[0]) if laws else 0
    events = len(pairs) * (1 << size) if exhaustive else len(pairs)
    passed = best_value <= tolerance
    witness = None
    if not passed:
        i, j = best_pair
        lhs = float(laws[i][best_event].sum())
        rhs = float(factor * laws[j][best_event].sum()) + params.delta
        witness = Witness(d=describe(i), d_prime=describe(j), event=best_event, lhs=lhs, rhs=rhs)
        logger.info(f"DP violated: {witness}")
    logger.debug(f"{len(pairs)} ordered pairs, {events} events, max violation {best_value:.3g}")
    return VerificationReport(passed=passed, witness=witness, max_violation=best_value,
                              pairs_checked=len(pairs), events_checked=events)


def _ordered_pairs(size: int) -> List[Tuple[int, int]]:
    return list(itertools.permutations(range(size), 2))


def check_dp_1d_exhaustive(kernel: FiniteKernel, params: PrivacyParams,
                           tolerance: float = TOLERANCE, threads: int = 1) -> VerificationReport:
    """Check the DP inequality for every ordered pair d != d' and every event A of the output space"""
    require_capacity("|U|", kernel.output_size, EVENT_CAPACITY,
                     "use delta_slack_closed_form for larger output spaces")
    laws = [kernel.row(d) for d in range(kernel.input_size)]
    return _check_laws(laws, _ordered_pairs(kernel.input_size), params, True, tolerance, threads,
                       lambda d: kernel.input_space.labels[d])


def check_dp_1d_closed_form(kernel: FiniteKernel, params: PrivacyParams,
                            tolerance: float = TOLERANCE, threads: int = 1) -> VerificationReport:
    """Same verdict as the exhaustive check, testing only each pair's maximizing event"""
    laws = [kernel.row(d) for d in range(kernel.input_size)]
    return _check_laws(laws, _ordered_pairs(kernel.input_size), params, False, tolerance, threads,
                       lambda d: kernel.input_space.labels[d])


def delta_slack_closed_form(kernel: FiniteKernel, epsilon: float) -> float:
    """Smallest delta for which the kernel is (epsilon, delta)-DP"""
    if math.isnan(epsilon) or epsilon < 0:
        raise SpecError(f"epsilon must be >= 0, got {epsilon}")
    scaled = scaled_mass(privacy_factor(epsilon), kernel.probs)
    slack = 0.0
    for d in range(kernel.input_size):
        gaps = kernel.probs[d][None, :] - scaled
        slack = max(slack, float(np.maximum(gaps, 0.0).sum(axis=1).max()))
    return min(max(slack, 0.0), 1.0)


def privacy_profile(kernel: FiniteKernel, epsilons: Iterable[float]) -> pd.DataFrame:
    """delta-slack of the kernel over a grid of epsilons"""
    rows = [{"epsilon": float(e), "delta": delta_slack_closed_form(kernel, float(e))} for e in epsilons]
    return pd.DataFrame(rows, columns=["epsilon", "delta"])


def _database_pairs(size: int, n: int) -> Tuple[List[Tuple[int, ...]], List[Tuple[int, int]]]:
    """All databases of D^n and every neighbouring pair in both directions"""
    databases = list(all_databases(size, n))
    position = {rows: i for i, rows in enumerate(databases)}
    pairs = []
    for left, right in neighbour_pairs(size, n):
        a, b = position[left], position[right]
        pairs.extend([(a, b), (b, a)])
    return databases, pairs


def check_dp_product_bruteforce(mech: ProductMechanism, params: PrivacyParams,
                                tolerance: float = TOLERANCE, threads: int = 1) -> VerificationReport:
    """Check the DP inequality for every neighbouring pair of D^n and every event of U^n"""
    require_capacity("|U|^n", mech.outcome_count, PRODUCT_EVENT_CAPACITY,
                     "check the one-row kernel with check_dp_1d_exhaustive instead; "
                     "a product sanitiser is private exactly when its one-row kernel is")
    space = mech.base.input_space
    databases, pairs = _database_pairs(space.size, mech.n)
    laws = [mech.law_of_rows(rows) for rows in databases]
    return _check_laws(laws, pairs, params, True, tolerance, threads,
                       lambda i: [space.labels[r] for r in databases[i]])


def check_query_dp(mech: ProductMechanism, q: FiniteQuery, params: PrivacyParams,
                   tolerance: float = TOLERANCE, threads: int = 1) -> VerificationReport:
    """Check the DP inequality for the sanitised responses Q(X_d) over every neighbouring pair of D^n.

    Response events are enumerated when E_Q has at most EVENT_CAPACITY values,
    otherwise each pair is tested on its maximizing event.
    """
    responses, inverse = response_fibers(q, mech.base.output_size, mech.n)
    space = mech.base.input_space
    databases, pairs = _database_pairs(space.size, mech.n)
    laws = [np.bincount(inverse, weights=mech.law_of_rows(rows), minlength=len(responses))
            for rows in databases]
    exhaustive = len(responses) <= EVENT_CAPACITY
    if not exhaustive:
        logger.debug(f"{len(responses)} responses: testing maximizing events only")
    return _check_laws(laws, pairs, params, exhaustive, tolerance, threads,
                       lambda i: [space.labels[r] for r in databases[i]])


def check_output_perturbation_dp(op: OutputPerturbation, space: FiniteMetricSpace, n: int,
                                 params: PrivacyParams, tolerance: float = TOLERANCE,
                                 threads: int = 1) -> VerificationReport:
    """Check the DP inequality for an output perturbation mechanism over every neighbouring pair of D^n"""
    require_capacity("|E_Q| response events", op.response_kernel.output_size, EVENT_CAPACITY,
                     "the response kernel's output space is too large to enumerate")
    databases, pairs = _database_pairs(space.size, n)
    laws = [np.asarray(op.law(Database(space, rows)).probs) for rows in databases]
    return _check_laws(laws, pairs, params, True, tolerance, threads,
                       lambda i: [space.labels[r] for r in databases[i]])


@dataclass(frozen=True)
class LaplaceIntervalReport:
    passed: bool
    max_ratio: float
    max_violation: float
    worst_interval: Tuple[float, float]
    intervals_checked: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "passed": self.passed,
            "max_ratio": self.max_ratio,
            "max_violation": self.max_violation,
            "worst_interval": [_json_bound(x) for x in self.worst_interval],
            "intervals_checked": self.intervals_checked,
        }


def _json_bound(x: float) -> Any:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def default_laplace_intervals(mech: LaplaceMechanism, count: int = 100) -> List[Tuple[float, float]]:
    """Left tails, right tails and finite windows spread around [lo - 5b, hi + 5b]"""
    tails = count // 5
    windows = count - 2 * tails
    cuts = np.linspace(mech.lo - 5 * mech.b, mech.hi + 5 * mech.b, tails)
    intervals = [(-math.inf, float(t)) for t in cuts] + [(float(t), math.inf) for t in cuts]
    starts = np.linspace(mech.lo - 5 * mech.b, mech.hi + 5 * mech.b, windows)
    widths = np.geomspace(mech.b / 100, 10 * mech.b, windows)
    intervals += [(float(s), float(s + w)) for s, w in zip(starts, widths[::-1])]
    return intervals


def check_laplace_intervals(mech: LaplaceMechanism, params: PrivacyParams,
                            intervals: Optional[Sequence[Tuple[float, float]]] = None,
                            tolerance: float = TOLERANCE) -> LaplaceIntervalReport:
    """The DP inequality for the two extreme centres lo and hi over a sweep of interval events.

    With delta = 0 the verdict is the probability ratio against e^epsilon; with
    delta > 0 it is the additive violation.
    """
    if intervals is None:
        intervals = default_laplace_intervals(mech)
    factor = params.factor
    max_ratio, max_violation, worst = 0.0, -math.inf, (math.nan, math.nan)
    for lo_a, hi_a in intervals:
        at_lo = mech.event_prob(mech.lo, lo_a, hi_a)
        at_hi = mech.event_prob(mech.hi, lo_a, hi_a)
        for p, q in ((at_lo, at_hi), (at_hi, at_lo)):
            ratio = p / q if q > 0 else (math.inf if p > 0 else 0.0)
            violation = p - factor * q - params.delta
            if (ratio > max_ratio) if params.delta == 0 else (violation > max_violation):
                worst = (lo_a, hi_a)
            max_ratio = max(max_ratio, ratio)
            max_violation = max(max_violation, violation)
    if params.delta == 0:
        passed = max_ratio <= factor + tolerance
    else:
        passed = max_violation <= tolerance
    logger.info(f"Laplace sweep over {len(intervals)} intervals: max ratio {max_ratio:.6g} "
                f"(e^epsilon = {factor:.6g}), passed={passed}")
    return LaplaceIntervalReport(passed=passed, max_ratio=max_ratio, max_violation=max_violation,
                                 worst_interval=worst, intervals_checked=len(intervals))


@dataclass(frozen=True)
class RectangleDecomposition:
    """Rectangles A~ x B~ with pairwise disjoint B~ parts covering a union of rectangles"""
    parts: List[Tuple[FrozenSet[Hashable], FrozenSet[Hashable]]]
    index_sets: List[Tuple[int, ...]] = field(default_factory=list)

    def points(self) -> Set[Tuple[Hashable, Hashable]]:
        return {(a, b) for left, right in self.parts for a in left for b in right}

    def b_parts_disjoint(self) -> bool:
        seen: Set[Hashable] = set()
        for _, right in self.parts:
            if seen & right:
                return False
            seen |= right
        return True

    def to_dict(self) -> Dict[str, Any]:
        return {"parts": [{"indices": list(index_set), "a": _sorted(left), "b": _sorted(right)}
                          for index_set, (left, right) in zip(self.index_sets, self.parts)]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RectangleDecomposition":
        parts, index_sets = [], []
        for part in data["parts"]:
            parts.append((frozenset(_hashable(a) for a in part["a"]), frozenset(_hashable(b) for b in part["b"])))
            index_sets.append(tuple(int(i) for i in part["indices"]))
        return cls(parts, index_sets)


def _hashable(value: Any) -> Hashable:
    if isinstance(value, list):
        return tuple(_hashable(v) for v in value)
    return value


def _sorted(items: Iterable[Hashable]) -> List[Hashable]:
    return sorted(items, key=lambda x: (str(type(x)), str(x)))


def rectangle_union(pairs: Sequence[Tuple[Iterable[Hashable], Iterable[Hashable]]]) -> Set[Tuple[Hashable, Hashable]]:
    """Points of the union of A_i x B_i"""
    return {(a, b) for left, right in pairs for a in left for b in right}


def decompose_rectangles(pairs: Sequence[Tuple[Iterable[Hashable], Iterable[Hashable]]]) -> RectangleDecomposition:
    """Rewrite a union of rectangles A_i x B_i so that the second factors are disjoint.

    For each nonempty index set I the part is (union of A_i over I) x
    (intersection of B_i over I minus the B_i outside I); empty parts are dropped.
    """
    if not pairs:
        raise SpecError("need at least one rectangle")
    rectangles = [(frozenset(a), frozenset(b)) for a, b in pairs]
    for i, (left, right) in enumerate(rectangles, start=1):
        if not left or not right:
            raise SpecError(f"rectangle {i} has an empty side")
    count = len(rectangles)
    require_capacity("number of rectangles", count, RECTANGLE_CAPACITY,
                     "2^p index sets would be enumerated")
    parts, index_sets = [], []
    for mask in range(1, 1 << count):
        inside = bitmask_members(mask)
        outside = [i for i in range(count) if not mask >> i & 1]
        right = frozenset.intersection(*(rectangles[i][1] for i in inside))
        for i in outside:
            right = right - rectangles[i][1]
        if not right:
            continue
        left = frozenset.union(*(rectangles[i][0] for i in inside))
        parts.append((left, right))
        index_sets.append(tuple(i + 1 for i in inside))
    return RectangleDecomposition(parts=parts, index_sets=index_sets)
