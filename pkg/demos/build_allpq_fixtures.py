"""Regenerate the all-PQ case14 fixtures and check them against the bundled copies.

Every PV bus becomes a PQ bus carrying its solved base-case P and Q. The stressed
variant multiplies each bus's reactive demand by 3.93.

    python3 demos/build_allpq_fixtures.py [--write DIR]
"""

from __future__ import annotations

import argparse
import dataclasses
from importlib.resources import files
from pathlib import Path

from helmgrid.netmodel import builtin_case, matpower_loads, to_matpower
from helmgrid.weakbus import all_pq_variant, scale_reactive_loads

STRESS = 3.93


def build():
    case14 = builtin_case("case14")
    loads = matpower_loads((files("helmgrid") / "data" / "case14.m").read_text())
    base = dataclasses.replace(all_pq_variant(case14), name="case14_allpq")
    stressed = dataclasses.replace(scale_reactive_loads(base, STRESS, loads), name="case14_allpq_q393")
    return base, stressed


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--write", type=Path, help="directory to write the .m files into")
    args = ap.parse_args()
    for model in build():
        text = to_matpower(model)
        bundled = (files("helmgrid") / "data" / f"{model.name}.m").read_text()
        print(f"{model.name}: {'matches' if bundled == text else 'differs from'} the bundled fixture")
        if args.write:
            args.write.mkdir(parents=True, exist_ok=True)
            (args.write / f"{model.name}.m").write_text(text)


if __name__ == "__main__":
    main()
