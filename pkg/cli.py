#!/usr/bin/env python3
"""
Command-line front end: calibration, verification, delta-slack, accuracy,
sanitisation, querying, functional certification and rectangle decomposition.

Exit codes: 0 success / DP holds, 1 DP violation, 2 usage, I/O or capacity error.
"""

import argparse
import logging
import os
import sys
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, List, Optional, TextIO, Tuple

import numpy as np

from accuracy import expected_error
from functional import (
    GridFunctionSpace,
    certify_projection_dp,
    functional_laplace_scale,
    load_functional_database,
    sanitize_records,
)
from mechanism import (
    PrivacyParams,
    laplace_scale,
    load_kernel,
    new_seed,
    product_kernel,
    pushforward,
    query_from_spec,
    release,
    rr_min_p,
)
from metric_core import load_database, load_space
from utils import (
    TOLERANCE,
    CapacityError,
    SpecError,
    format_report_text,
    load_json,
    parse_indices,
    require_field,
    to_json,
)
from verifier import (
    check_dp_1d_closed_form,
    check_dp_1d_exhaustive,
    check_dp_product_bruteforce,
    check_query_dp,
    decompose_rectangles,
    delta_slack_closed_form,
)

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("calibrate", "verify", "slack", "error", "sanitize", "query", "certify-functional", "decompose")
VERIFY_MODES = ("exhaustive", "closed-form", "product", "query")

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2


@dataclass
class CliConfig:
    """Validated command-line configuration"""
    subcommand: str
    target: Optional[str] = None
    kernel: Optional[str] = None
    space: Optional[str] = None
    db: Optional[str] = None
    query: Optional[str] = None
    functional: Optional[str] = None
    pairs: Optional[str] = None
    epsilon: Optional[float] = None
    delta: Optional[float] = None
    n: Optional[int] = None
    m: Optional[int] = None
    seed: Optional[int] = None
    tolerance: float = TOLERANCE
    format: str = "json"
    mode: str = "exhaustive"
    threads: int = 1
    diam: Optional[float] = None
    lo: Optional[float] = None
    hi: Optional[float] = None
    k: Optional[int] = None
    b: Optional[float] = None
    indices: Optional[str] = None
    monte_carlo: bool = False
    draws: int = 100_000

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise SpecError(f"unknown subcommand '{self.subcommand}'")
        if self.format not in ("json", "text"):
            raise SpecError(f"unknown format '{self.format}'", "--format")
        if self.threads < 1:
            raise SpecError("must be at least 1", "--threads")
        if not self.tolerance >= 0:
            raise SpecError("must be >= 0", "--tolerance")
        for flag in self.required_flags():
            if getattr(self, flag) is None:
                raise SpecError(f"'{self.subcommand}' requires --{flag.replace('_', '-')}")
        if self.epsilon is not None or self.delta is not None:
            # validates the ranges
            PrivacyParams(self.epsilon if self.epsilon is not None else 0.0,
                          self.delta if self.delta is not None else 0.0)

    def required_flags(self) -> List[str]:
        """Flags that must be present for the chosen subcommand"""
        command = self.subcommand
        if command == "calibrate":
            if self.target == "rr":
                return ["m", "epsilon", "delta"]
            if self.target == "laplace":
                return ["epsilon", "delta"] + ([] if self.diam is not None else ["lo", "hi"])
            if self.target == "functional":
                return ["k", "lo", "hi", "epsilon", "delta"]
            raise SpecError(f"unknown calibration target '{self.target}'")
        if command == "verify":
            if self.mode not in VERIFY_MODES:
                raise SpecError(f"unknown mode '{self.mode}'", "--mode")
            extra = {"product": ["n"], "query": ["n", "query"]}.get(self.mode, [])
            return ["kernel", "epsilon", "delta"] + extra
        if command == "slack":
            return ["kernel", "epsilon"]
        if command == "error":
            return ["kernel", "epsilon", "delta"]
        if command == "sanitize":
            if self.functional is not None:
                return ["lo", "hi", "epsilon", "delta"]
            return ["kernel", "db"]
        if command == "query":
            return ["kernel", "db", "query"]
        if command == "certify-functional":
            return ["k", "lo", "hi", "b", "epsilon", "delta"]
        return ["pairs"]

    @property
    def params(self) -> PrivacyParams:
        return PrivacyParams(self.epsilon, self.delta if self.delta is not None else 0.0)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "CliConfig":
        values = {name: getattr(args, name) for name in cls.__dataclass_fields__ if hasattr(args, name)}
        return cls(**values)


def _calibrate(config: CliConfig) -> Tuple[Dict[str, Any], int]:
    params = config.params
    if config.target == "rr":
        return {"mechanism": "rr", "m": config.m, "p": rr_min_p(config.m, params), **params.to_dict()}, EXIT_OK
    if config.target == "laplace":
        diam = config.diam if config.diam is not None else config.hi - config.lo
        return {"mechanism": "laplace", "diam": diam, "b": laplace_scale(diam, params), **params.to_dict()}, EXIT_OK
    space = _grid_space(config)
    return {"mechanism": "functional_laplace", "k": space.k, "lo": space.lo, "hi": space.hi,
            "b": functional_laplace_scale(space, params), **params.to_dict()}, EXIT_OK


def _verify(config: CliConfig) -> Tuple[Dict[str, Any], int]:
    kernel = load_kernel(config.kernel)
    options = dict(tolerance=config.tolerance, threads=config.threads)
    if config.mode == "exhaustive":
        report = check_dp_1d_exhaustive(kernel, config.params, **options)
    elif config.mode == "closed-form":
        report = check_dp_1d_closed_form(kernel, config.params, **options)
    elif config.mode == "product":
        report = check_dp_product_bruteforce(product_kernel(kernel, config.n), config.params, **options)
    else:
        q = query_from_spec(load_json(config.query), kernel.output_space, location=config.query)
        report = check_query_dp(product_kernel(kernel, config.n), q, config.params, **options)
    return report.to_dict(), EXIT_OK if report.passed else EXIT_VIOLATION


def _slack(config: CliConfig) -> Tuple[Dict[str, Any], int]:
    kernel = load_kernel(config.kernel)
    slack = delta_slack_closed_form(kernel, config.epsilon)
    report: Dict[str, Any] = {"epsilon": config.epsilon, "slack": slack}
    if config.delta is None:
        return report, EXIT_OK
    passed = slack <= config.delta + config.tolerance
    report.update({"delta": config.delta, "passed": passed})
    return report, EXIT_OK if passed else EXIT_VIOLATION


def _error(config: CliConfig) -> Tuple[Dict[str, Any], int]:
    kernel = load_kernel(config.kernel)
    metric = load_space(config.space) if config.space else None
    return expected_error(kernel, metric, config.params).to_dict(), EXIT_OK


def _sanitize(config: CliConfig) -> Tuple[Dict[str, Any], int]:
    seed = config.seed if config.seed is not None else new_seed()
    if config.functional is not None:
        space, records = load_functional_database(config.functional, config.lo, config.hi)
        b = functional_laplace_scale(space, config.params)
        return {"b": b, "grid": list(space.grid), "records": sanitize_records(records, b, seed),
                "seed": seed}, EXIT_OK
    kernel = load_kernel(config.kernel)
    db = load_database(config.db, kernel.input_space)
    return release(product_kernel(kernel, db.n), db, seed).to_dict(), EXIT_OK


def _query(config: CliConfig) -> Tuple[Dict[str, Any], int]:
    kernel = load_kernel(config.kernel)
    db = load_database(config.db, kernel.input_space)
    q = query_from_spec(load_json(config.query), kernel.output_space, location=config.query)
    mech = product_kernel(kernel, db.n)
    if config.monte_carlo:
        seed = config.seed if config.seed is not None else new_seed()
        result = pushforward(mech, db, q, method="monte_carlo", draws=config.draws, seed=seed)
        return {"query": q.name, "seed": seed, **result.to_dict()}, EXIT_OK
    return {"query": q.name, **pushforward(mech, db, q).to_dict()}, EXIT_OK


def _grid_space(config: CliConfig) -> GridFunctionSpace:
    if config.k < 1:
        raise SpecError("must be at least 1", "--k")
    grid = np.linspace(0.0, 1.0, config.k) if config.k > 1 else np.zeros(1)
    return GridFunctionSpace(tuple(grid.tolist()), config.lo, config.hi)


def _certify(config: CliConfig) -> Tuple[Dict[str, Any], int]:
    space = _grid_space(config)
    indices = parse_indices(config.indices) if config.indices else list(range(1, space.k + 1))
    certificate = certify_projection_dp(space, config.b, config.params, indices, config.tolerance)
    return certificate.to_dict(), EXIT_OK if certificate.certified else EXIT_VIOLATION


def _decompose(config: CliConfig) -> Tuple[Dict[str, Any], int]:
    data = load_json(config.pairs)
    if not isinstance(data, list):
        raise SpecError("expected a JSON list of rectangles", config.pairs)
    pairs = []
    for i, item in enumerate(data):
        location = f"{config.pairs}[{i}]"
        if isinstance(item, dict):
            a, b = require_field(item, "a", location), require_field(item, "b", location)
        elif isinstance(item, list) and len(item) == 2:
            a, b = item
        else:
            raise SpecError("expected {\"a\": [...], \"b\": [...]} or [A, B]", location)
        for name, side in (("a", a), ("b", b)):
            if not isinstance(side, list):
                raise SpecError(f"expected a JSON array, got {type(side).__name__}", f"{location}.{name}")
        pairs.append((a, b))
    return decompose_rectangles(pairs).to_dict(), EXIT_OK


HANDLERS: Dict[str, Callable[[CliConfig], Tuple[Dict[str, Any], int]]] = {
    "calibrate": _calibrate,
    "verify": _verify,
    "slack": _slack,
    "error": _error,
    "sanitize": _sanitize,
    "query": _query,
    "certify-functional": _certify,
    "decompose": _decompose,
}


def run(config: CliConfig, stdout: Optional[TextIO] = None, stderr: Optional[TextIO] = None) -> int:
    """Dispatch to the subcommand, write its report and return the exit code"""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        report, code = HANDLERS[config.subcommand](config)
    except (ValueError, TypeError, CapacityError, OSError) as e:
        logger.error(f"{config.subcommand} failed: {e}")
        stderr.write(f"error: {e}\n")
        return EXIT_USAGE
    if config.format == "json":
        stdout.write(to_json(report))
    else:
        stdout.write(format_report_text(report) + "\n")
    return code


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=["json", "text"], default="json")
    common.add_argument("--tolerance", type=float, default=TOLERANCE,
                        help="slack allowed in DP inequality checks (default 1e-9)")
    common.add_argument("--threads", type=int, default=1, help="workers for pair enumeration")

    privacy = argparse.ArgumentParser(add_help=False)
    privacy.add_argument("--epsilon", type=float)
    privacy.add_argument("--delta", type=float)

    parser = argparse.ArgumentParser(prog="dpmetric",
                                     description="Differential privacy on finite metric spaces")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    cal = sub.add_parser("calibrate", parents=[common, privacy], help="minimal rr p or Laplace scale")
    cal.add_argument("target", choices=["rr", "laplace", "functional"])
    cal.add_argument("--m", type=int, help="|D| - 1 for randomized response")
    cal.add_argument("--diam", type=float)
    cal.add_argument("--lo", type=float)
    cal.add_argument("--hi", type=float)
    cal.add_argument("--k", type=int, help="grid size of functional records")

    ver = sub.add_parser("verify", parents=[common, privacy], help="decide (epsilon, delta)-DP of a kernel")
    ver.add_argument("--kernel")
    ver.add_argument("--mode", choices=VERIFY_MODES, default="exhaustive")
    ver.add_argument("--n", type=int, help="database rows (product and query modes)")
    ver.add_argument("--query", help="query spec JSON (query mode)")

    sl = sub.add_parser("slack", parents=[common, privacy], help="minimal delta at a given epsilon")
    sl.add_argument("--kernel")

    err = sub.add_parser("error", parents=[common, privacy], help="maximal expected error and lower bounds")
    err.add_argument("--kernel")
    err.add_argument("--space", help="metric space of the outputs (default: the kernel's output space)")

    san = sub.add_parser("sanitize", parents=[common, privacy], help="sanitise a database")
    san.add_argument("--kernel")
    san.add_argument("--db")
    san.add_argument("--functional", help="functional database CSV")
    san.add_argument("--lo", type=float)
    san.add_argument("--hi", type=float)
    san.add_argument("--seed", type=int)

    qry = sub.add_parser("query", parents=[common], help="law of a query on the sanitised database")
    qry.add_argument("--kernel")
    qry.add_argument("--db")
    qry.add_argument("--query")
    qry.add_argument("--monte-carlo", dest="monte_carlo", action="store_true")
    qry.add_argument("--draws", type=int, default=100_000)
    qry.add_argument("--seed", type=int)

    cert = sub.add_parser("certify-functional", parents=[common, privacy],
                          help="certify a projection of the functional Laplace sanitiser")
    cert.add_argument("--k", type=int)
    cert.add_argument("--lo", type=float)
    cert.add_argument("--hi", type=float)
    cert.add_argument("--b", type=float)
    cert.add_argument("--indices", help="1-based grid positions, e.g. 1,3")

    dec = sub.add_parser("decompose", parents=[common], help="disjoint rectangle decomposition")
    dec.add_argument("--pairs")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=os.getenv("DPMETRIC_LOG_LEVEL", "WARNING").upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        config = CliConfig.from_args(args)
    except SpecError as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_USAGE
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
