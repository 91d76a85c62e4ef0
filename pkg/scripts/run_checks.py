#!/usr/bin/env python3
"""
Script to run the desk-scale privacy checks: randomized response at its minimal p
and the tightness of its expected error
"""

import math
import os
import sys

# Make the flat top-level modules importable when run from anywhere
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from accuracy import check_tightness  # noqa: E402
from mechanism import PrivacyParams, rr_kernel, rr_min_p  # noqa: E402
from metric_core import discrete_metric_space  # noqa: E402
from verifier import check_dp_1d_exhaustive, delta_slack_closed_form  # noqa: E402

SIZES = [1, 2, 3, 7]
EPSILONS = [0.0, math.log(2.0), 1.0, 2.0]
DELTAS = [0.0, 0.1, 0.5]


def run_rr_sweep() -> int:
    """Check every grid point; return the number of failures"""
    print("\n🔍 Randomized response at p = rr_min_p")
    failures = 0
    for m in SIZES:
        space = discrete_metric_space([f"v{i}" for i in range(m + 1)])
        for epsilon in EPSILONS:
            for delta in DELTAS:
                params = PrivacyParams(epsilon, delta)
                kernel = rr_kernel(space, rr_min_p(m, params), strict=False)
                passed = check_dp_1d_exhaustive(kernel, params).passed
                slack = delta_slack_closed_form(kernel, epsilon)
                ok = passed and abs(slack - delta) <= 1e-9
                failures += not ok
                mark = "✅" if ok else "❌"
                print(f"{mark} m={m} ε={epsilon:.4f} δ={delta:.2f}  slack={slack:.3g}")
    return failures


def run_tightness() -> int:
    print("\n📏 Expected error against the finite-space lower bound")
    failures = 0
    for m in SIZES:
        space = discrete_metric_space([f"v{i}" for i in range(m + 1)])
        for epsilon in EPSILONS:
            for delta in DELTAS:
                report = check_tightness(space, PrivacyParams(epsilon, delta))
                failures += not report.tight
                mark = "✅" if report.tight else "❌"
                print(f"{mark} m={m} ε={epsilon:.4f} δ={delta:.2f}  "
                      f"error={report.max_error:.6f} bound={report.bound_finite:.6f}")
    return failures


if __name__ == "__main__":
    print("🔐 Differential privacy on finite metric spaces")
    print("=" * 50)

    try:
        failures = run_rr_sweep() + run_tightness()
    except KeyboardInterrupt:
        print("\n👋 Checks stopped by user")
        sys.exit(130)

    print("\n" + "=" * 50)
    if failures:
        print(f"❌ {failures} check(s) failed")
        sys.exit(1)
    print("✅ All checks passed")
