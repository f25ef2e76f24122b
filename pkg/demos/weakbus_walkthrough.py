"""Weak-bus ranking on the all-PQ case14: HEM V-Q sensitivities next to modal analysis.

    python3 demos/weakbus_walkthrough.py
"""

from __future__ import annotations

from helmgrid.hem import HemError
from helmgrid.modal import compare_rankings, modal_analysis, newton_solve
from helmgrid.netmodel import builtin_case
from helmgrid.weakbus import rank_weak_buses


def show(name: str) -> None:
    m = builtin_case(name)
    print(f"{name}:")
    if not newton_solve(m).converged:
        print("  no power-flow solution; this loading is past the nose")
        return
    try:
        ranking = rank_weak_buses(m, top_k=5)
    except HemError as exc:
        print(f"  HEM failed: {exc}")
        return
    modal = modal_analysis(m)
    for r in ranking.records:
        print(f"  bus {r.bus:3d}  dV/dQ {r.dv_dq:.5f} pu/pu")
    print(f"  excluded (positive net Q): {[x.bus for x in ranking.excluded]}")
    print(f"  modal order {modal.weakest_buses[:5]}, smallest eigenvalue {modal.eigenvalues[0]:.5f}")
    agree = compare_rankings(ranking, modal, 5)
    print(f"  exact match {agree.exact_match}, Kendall tau {agree.kendall_tau:.3f}")


def main() -> None:
    for name in ("case14_allpq", "case14_allpq_q393"):
        show(name)


if __name__ == "__main__":
    main()
