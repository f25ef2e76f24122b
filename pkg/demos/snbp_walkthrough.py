"""Saddle-node point of case118: Newton bisection, the sigma scan and the pole/zero estimate.

    python3 demos/snbp_walkthrough.py
"""

from __future__ import annotations

import time

from helmgrid.modal import bisect_collapse
from helmgrid.netmodel import builtin_case
from helmgrid.sigma import estimate_snbp, min_condition, sigma_indices


def main() -> None:
    m = builtin_case("case118")
    oracle = bisect_collapse(m, 1.0, 4.0)
    print(f"Newton-Raphson collapse by bisection: lambda = {oracle:.4f}")

    for lam in (1.0, 2.0, 3.0, 3.15):
        cond, bus = min_condition(sigma_indices(m, lam))
        print(f"  lambda {lam:4.2f}: smallest sigma condition {cond:.3e} at bus {bus}")

    t0 = time.perf_counter()
    est = estimate_snbp(m, threads=4)
    print(f"sigma-negative scan: lambda* = {est.lambda_star:.4f} (bus {est.detecting_bus}), "
          f"{len(est.scan_trace)} scan points, {time.perf_counter() - t0:.1f}s")
    print(f"pole/zero estimate: lambda* = {est.polezero.lambda_star:.4f}")
    print(f"both within 2% above the oracle: "
          f"{all(oracle <= x <= 1.02 * oracle for x in (est.lambda_star, est.polezero.lambda_star))}")


if __name__ == "__main__":
    main()
