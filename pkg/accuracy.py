import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from mechanism import FiniteKernel, PrivacyParams, rr_kernel, rr_min_p
from metric_core import FiniteMetricSpace, SpaceStats, space_stats
from utils import SpecError
from verifier import check_dp_1d_exhaustive

logger = logging.getLogger(__name__)

# tightness is an exact identity, so only rounding noise is tolerated
TIGHTNESS_TOLERANCE = 1e-12


@dataclass
class ErrorReport:
    """Expected error of each input point and the maximal expected error"""
    per_point: List[Dict[str, Any]]
    max_error: float
    bound_general: Optional[float] = None
    bound_finite: Optional[float] = None
    tight: bool = False
    vacuous: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "per_point": [dict(p) for p in self.per_point],
            "max_error": self.max_error,
            "bound_general": self.bound_general,
            "bound_finite": self.bound_finite,
            "tight": self.tight,
            "vacuous": self.vacuous,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ErrorReport":
        return cls(
            per_point=[dict(p) for p in data["per_point"]],
            max_error=float(data["max_error"]),
            bound_general=data.get("bound_general"),
            bound_finite=data.get("bound_finite"),
            tight=bool(data.get("tight", False)),
            vacuous=bool(data.get("vacuous", False)),
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.per_point, columns=["point", "error"])


def lower_bound_general(diam: float, params: PrivacyParams) -> float:
    """Every (epsilon, delta)-DP mechanism has maximal expected error >= (1 - delta) diam / (2 (1 + e^epsilon))"""
    if not diam > 0:
        raise SpecError(f"diameter must be positive, got {diam}")
    if params.vacuous:
        logger.warning("delta = 1: the general lower bound is vacuous")
        return 0.0
    return (1.0 - params.delta) * diam / (2.0 * (1.0 + params.factor))


def lower_bound_finite(kappa: float, m: int, params: PrivacyParams) -> float:
    """For |D| = m + 1 with minimum distance kappa: error >= (1 - delta) kappa m / (m + e^epsilon)"""
    if not kappa > 0:
        raise SpecError(f"kappa must be positive, got {kappa}")
    if m < 1:
        raise SpecError(f"m must be at least 1, got {m}")
    if params.vacuous:
        logger.warning("delta = 1: the finite-space lower bound is vacuous")
        return 0.0
    return (1.0 - params.delta) * kappa * m / (m + params.factor)


def _metric_positions(kernel: FiniteKernel, metric: FiniteMetricSpace) -> Dict[str, List[int]]:
    """Positions in ``metric`` of the kernel's outputs and inputs"""
    try:
        outputs = [metric.index_of(label) for label in kernel.output_space.labels]
        inputs = [metric.index_of(label) for label in kernel.input_space.labels]
    except SpecError as e:
        raise SpecError(f"kernel points are not embedded in the metric space: {e}") from e
    return {"outputs": outputs, "inputs": inputs}


def data_space_stats(kernel: FiniteKernel, metric: FiniteMetricSpace) -> SpaceStats:
    """diam, kappa and m of the input space D under ``metric``"""
    inputs = _metric_positions(kernel, metric)["inputs"]
    restricted = FiniteMetricSpace(tuple(metric.labels[i] for i in inputs),
                                   metric.dist[np.ix_(inputs, inputs)])
    return space_stats(restricted)


def expected_error(kernel: FiniteKernel, metric: Optional[FiniteMetricSpace] = None,
                   params: Optional[PrivacyParams] = None,
                   tolerance: float = TIGHTNESS_TOLERANCE) -> ErrorReport:
    """E[rho(X_d, d)] for every d in D, their maximum, and the two lower bounds when ``params`` is given"""
    metric = metric if metric is not None else kernel.output_space
    positions = _metric_positions(kernel, metric)
    distances = metric.dist[np.ix_(positions["inputs"], positions["outputs"])]
    errors = (kernel.probs * distances).sum(axis=1)
    per_point = [{"point": label, "error": float(e)} for label, e in zip(kernel.input_space.labels, errors)]
    report = ErrorReport(per_point=per_point, max_error=float(errors.max()))
    if params is None:
        return report

    stats = data_space_stats(kernel, metric)
    report.bound_general = lower_bound_general(stats.diam, params)
    report.bound_finite = lower_bound_finite(stats.kappa, stats.m, params)
    report.vacuous = params.vacuous
    report.tight = abs(report.max_error - report.bound_finite) <= tolerance
    logger.info(f"max expected error {report.max_error:.6g}, bounds {report.bound_general:.6g} / "
                f"{report.bound_finite:.6g}, tight={report.tight}")
    return report


@dataclass
class TightnessReport:
    """Randomized response at its minimal p against the finite-space bound"""
    p: float
    max_error: float
    bound_finite: float
    tight: bool
    dp_passed: bool
    params: PrivacyParams = field(repr=False, default=None)

    def to_dict(self) -> Dict[str, Any]:
        return {"p": self.p, "max_error": self.max_error, "bound_finite": self.bound_finite,
                "tight": self.tight, "dp_passed": self.dp_passed,
                "epsilon": self.params.epsilon, "delta": self.params.delta}


def check_tightness(space: FiniteMetricSpace, params: PrivacyParams,
                    tolerance: float = TIGHTNESS_TOLERANCE) -> TightnessReport:
    """Under the discrete metric randomized response at p = rr_min_p attains the finite-space bound"""
    off_diagonal = space.dist[~np.eye(space.size, dtype=bool)]
    if space.size < 2 or not np.all(off_diagonal == 1.0):
        raise SpecError("tightness holds for the discrete metric only (every pairwise distance 1)")
    if params.vacuous:
        raise SpecError("tightness needs delta < 1")
    m = space.size - 1
    p = rr_min_p(m, params)
    kernel = rr_kernel(space, p, strict=False)
    errors = expected_error(kernel, space, params, tolerance)
    dp = check_dp_1d_exhaustive(kernel, params)
    return TightnessReport(p=p, max_error=errors.max_error, bound_finite=errors.bound_finite,
                           tight=errors.tight and dp.passed, dp_passed=dp.passed, params=params)


def bound_curve(diam: float, kappa: float, m: int, epsilons: Iterable[float], delta: float = 0.0) -> pd.DataFrame:
    """Both lower bounds, and the error of the tight randomized response under the discrete metric, over epsilon"""
    rows = []
    for epsilon in epsilons:
        params = PrivacyParams(float(epsilon), delta)
        rows.append({
            "epsilon": float(epsilon),
            "bound_general": lower_bound_general(diam, params),
            "bound_finite": lower_bound_finite(kappa, m, params),
            "rr_error": m * rr_min_p(m, params) * kappa,
        })
    return pd.DataFrame(rows, columns=["epsilon", "bound_general", "bound_finite", "rr_error"])
