"""``helmgrid <solve|snbp|sigma|weakbus> <case> [flags]``.

Exit codes: 0 ok, 1 bad input (arguments, missing or malformed case), 2 solve failure,
3 internal error. JSON reports carry the tool version, the echoed configuration and a
SHA-256 of the case file, and print floats at 12 significant digits so that identical
runs give byte-identical output.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .approximant import PadeError, PoleProximityError
from .hem import AllScaling, HemError, compute_series, embed, evaluate_solution, power_balance_residual
from .modal import BracketError, SolverError, bisect_collapse, compare_rankings, modal_analysis, newton_solve
from .netmodel import CaseError, NetworkModel, load_case, scale_injections
from .sigma import DEFAULT_SNBP_TERMS, estimate_snbp, polezero_estimate, sigma_indices
from .weakbus import rank_weak_buses

logger = logging.getLogger("helmgrid")

EXIT_OK, EXIT_INPUT, EXIT_SOLVE, EXIT_INTERNAL = 0, 1, 2, 3
SOLVE_TOL = 1e-6  # per-unit power-balance residual accepted from the HEM voltages
DATA_DIR = Path(__file__).parent / "data"


class InputError(Exception):
    pass


class SolveFailure(Exception):
    """Raised after the report is written when the run did not converge."""


# ---------------------------------------------------------------------------
# output helpers

def _clean(x):
    """Recursively convert to JSON-ready values with 12 significant digits."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [_clean(x.real), _clean(x.imag)]
    if isinstance(x, (float, np.floating)):
        if not np.isfinite(x):
            return None
        return float(f"{float(x):.12g}")
    return x


def dumps(doc) -> str:
    return json.dumps(_clean(doc), indent=2) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else (f"{v:.12g}" if isinstance(v, float) else v) for v in r])
    return buf.getvalue()


@dataclass(frozen=True)
class LoadedCase:
    model: NetworkModel
    path: str
    sha256: str


def resolve_case(arg: str) -> LoadedCase:
    """A case path, or the name of a bundled case (``case14``, ``case118.m``, ``twobus.json``...)."""
    p = Path(arg)
    if not p.exists():
        for cand in (DATA_DIR / p.name, DATA_DIR / f"{p.stem}.m", DATA_DIR / f"{p.stem}.json"):
            if cand.exists():
                p = cand
                break
        else:
            raise InputError(f"case not found: {arg}")
    raw = p.read_bytes()
    try:
        model = load_case(p)
    except CaseError as exc:
        raise InputError(f"{p}: {exc}") from exc
    return LoadedCase(model, str(arg), hashlib.sha256(raw).hexdigest())


def _header(args, case: LoadedCase) -> dict:
    # thread count and output path do not change the result, so they stay out of the echo
    cfg = {k.rstrip("_"): v for k, v in sorted(vars(args).items()) if k not in ("threads", "out")}
    return {"tool": "helmgrid", "version": __version__, "command": args.command, "config": cfg,
            "case": {"name": case.model.name, "path": case.path, "sha256": case.sha256,
                     "n_bus": case.model.n_bus}}


def _pade(args):
    return tuple(args.pade) if args.pade else None


# ---------------------------------------------------------------------------
# commands; each returns (report dict, csv text, ok flag)

def cmd_solve(args, case: LoadedCase):
    model = case.model
    scaled = scale_injections(model, args.lambda_)
    sol = compute_series(embed(model, AllScaling(args.lambda_)), args.n_terms)
    v_hem = evaluate_solution(sol, 1.0, strict=False, order=_pade(args))
    hem_res = power_balance_residual(scaled, v_hem) if np.all(np.isfinite(v_hem)) else float("inf")
    nr = newton_solve(scaled)
    if not nr.converged and hem_res <= SOLVE_TOL:
        nr = newton_solve(scaled, v0=v_hem)
    dev = float(np.max(np.abs(v_hem - nr.v))) if nr.converged and np.isfinite(hem_res) else None
    ok = nr.converged and hem_res <= SOLVE_TOL
    buses = []
    for i, b in enumerate(model.buses):
        buses.append({"bus": b.id, "kind": b.kind.value, "v_hem": v_hem[i],
                      "v_nr": nr.v[i] if nr.converged else None,
                      "vm_hem": abs(v_hem[i]), "va_hem_deg": float(np.degrees(np.angle(v_hem[i])))})
    report = {"lambda": args.lambda_, "converged": ok,
              "hem": {"n_terms": args.n_terms, "residual": hem_res, "germ_residual": sol.germ_residual},
              "newton": {"converged": nr.converged, "iterations": nr.iterations, "max_mismatch": nr.max_mismatch},
              "max_deviation": dev, "buses": buses}
    rows = [(r["bus"], r["kind"], v_hem[i].real, v_hem[i].imag, r["vm_hem"], r["va_hem_deg"],
             nr.v[i].real if nr.converged else None, nr.v[i].imag if nr.converged else None)
            for i, r in enumerate(buses)]
    text = _csv(["bus", "kind", "v_hem_re", "v_hem_im", "vm_hem", "va_hem_deg", "v_nr_re", "v_nr_im"], rows)
    return report, text, ok


def _estimate_dict(e):
    if e is None:
        return None
    return {"method": e.method, "lambda_star": e.lambda_star, "detecting_bus": e.detecting_bus,
            "detected": e.detected}


def collapse_oracle(model: NetworkModel, ceiling: float, widen: int = 6) -> float | None:
    """Newton-Raphson bisection on ``[1, hi]``; ``hi`` starts at ``ceiling`` and grows by half
    while Newton still converges there."""
    hi = ceiling
    for _ in range(widen + 1):
        try:
            return bisect_collapse(model, 1.0, hi)
        except BracketError as exc:
            if exc.side != "hi":
                logger.warning("collapse oracle unavailable: %s", exc)
                return None
            hi *= 1.5
    logger.warning("collapse oracle: Newton-Raphson still converges at %s", hi)
    return None


def cmd_snbp(args, case: LoadedCase):
    model = case.model
    n_terms = args.n_terms or DEFAULT_SNBP_TERMS
    sig = pz = None
    trace = []
    if args.method in ("sigma", "both"):
        sig = estimate_snbp(model, ceiling=args.ceiling, n_terms=n_terms, threads=args.threads,
                            with_polezero=args.method == "both")
        pz, trace = sig.polezero, sig.scan_trace
    else:
        pz = polezero_estimate(model, ceiling=args.ceiling, n_terms=n_terms)
    oracle = collapse_oracle(model, args.ceiling)
    report = {"n_terms": n_terms, "ceiling": args.ceiling,
              "sigma": _estimate_dict(sig), "polezero": _estimate_dict(pz),
              "newton_bisection": oracle, "reactive_limits": False,
              "scan_trace": [{"lambda": p.lam, "min_condition": p.min_condition, "bus": p.bus,
                              "mismatch": p.mismatch} for p in trace]}
    text = _csv(["lambda", "min_condition", "bus", "mismatch"],
                [(p.lam, p.min_condition, p.bus, p.mismatch) for p in trace])
    ok = any(e is not None and e.detected for e in (sig, pz))
    return report, text, ok


def parabola_samples(n: int = 81, sigma_r_max: float = 1.0) -> list[tuple[float, float]]:
    """Points on ``sigma_i^2 = 0.25 + sigma_r``, the boundary of solvability."""
    si = np.linspace(-np.sqrt(0.25 + sigma_r_max), np.sqrt(0.25 + sigma_r_max), n)
    return [(float(s * s - 0.25), float(s)) for s in si]


def cmd_sigma(args, case: LoadedCase):
    idx = sigma_indices(case.model, args.lambda_, args.n_terms or DEFAULT_SNBP_TERMS)
    conds = [s.condition for s in idx]
    finite = [c for c in conds if np.isfinite(c)]
    worst = min(range(len(idx)), key=lambda k: conds[k] if np.isfinite(conds[k]) else -np.inf) if idx else None
    report = {"lambda": args.lambda_, "reactive_limits": False,
              "min_condition": min(finite) if len(finite) == len(conds) and finite else None,
              "min_bus": idx[worst].bus if worst is not None else None,
              "buses": [{"bus": s.bus, "sigma_r": s.sigma_r, "sigma_i": s.sigma_i, "condition": s.condition,
                         "u": s.u} for s in idx],
              "parabola": [{"sigma_r": r, "sigma_i": i} for r, i in parabola_samples()]}
    rows = [("bus", s.bus, s.sigma_r, s.sigma_i, s.condition) for s in idx]
    rows += [("parabola", None, r, i, 0.0) for r, i in parabola_samples()]
    text = _csv(["kind", "bus", "sigma_r", "sigma_i", "condition"], rows)
    return report, text, len(finite) == len(conds)


def cmd_weakbus(args, case: LoadedCase):
    model = case.model
    if not newton_solve(model).converged:
        raise SolveFailure("base case has no converged power-flow solution")
    dq = args.dq_mvar / model.base_mva
    rank = rank_weak_buses(model, top_k=args.top, dq=dq, n_terms=args.n_terms or 2, threads=args.threads)
    modal = modal_analysis(model)
    agree = compare_rankings(rank, modal, top_k=args.top)
    report = {"dq_pu": dq,
              "hem": [{"bus": r.bus, "dv_dq": r.dv_dq, "sign": r.sign} for r in rank.records],
              "excluded": [{"bus": r.bus, "reason": r.reason} for r in rank.excluded],
              "modal": modal.weakest_buses[: args.top],
              "smallest_eigenvalue": modal.eigenvalues[0],
              "agreement": {"exact_match": agree.exact_match, "kendall_tau": agree.kendall_tau,
                            "differences": [list(d) for d in agree.position_diff]}}
    modal_list = modal.weakest_buses[: args.top]
    rows = []
    for k in range(max(len(rank.records), len(modal_list))):
        h = rank.records[k] if k < len(rank.records) else None
        rows.append((k + 1, h.bus if h else None, h.dv_dq if h else None,
                     modal_list[k] if k < len(modal_list) else None))
    text = _csv(["rank", "hem_bus", "dv_dq", "modal_bus"], rows)
    return report, text, True


COMMANDS = {"solve": cmd_solve, "snbp": cmd_snbp, "sigma": cmd_sigma, "weakbus": cmd_weakbus}


# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="helmgrid", description="Holomorphic embedding power-flow tools.")
    p.add_argument("--version", action="version", version=f"helmgrid {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("case", help="MATPOWER .m or JSON case file, or a bundled case name")
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        sp.add_argument("--out", help="write the report here instead of stdout")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("-v", "--verbose", action="store_true")

    s = sub.add_parser("solve", help="HEM voltages at a loading, next to Newton-Raphson")
    common(s)
    s.add_argument("--lambda", dest="lambda_", type=float, default=1.0)
    s.add_argument("--n-terms", type=int, default=50)
    s.add_argument("--pade", type=int, nargs=2, metavar=("L", "M"))

    s = sub.add_parser("snbp", help="saddle-node bifurcation estimate")
    common(s)
    s.add_argument("--n-terms", type=int, default=None, help=f"default {DEFAULT_SNBP_TERMS}")
    s.add_argument("--method", choices=("sigma", "polezero", "both"), default="both")
    s.add_argument("--ceiling", type=float, default=4.0, help="upper end of the loading scan")

    s = sub.add_parser("sigma", help="sigma indices of every bus at a loading")
    common(s)
    s.add_argument("--lambda", dest="lambda_", type=float, default=1.0)
    s.add_argument("--n-terms", type=int, default=None, help=f"default {DEFAULT_SNBP_TERMS}")

    s = sub.add_parser("weakbus", help="V-Q sensitivity ranking with a modal-analysis comparison")
    common(s)
    s.add_argument("--top", type=int, default=5)
    s.add_argument("--dq-mvar", type=float, default=1.0)
    s.add_argument("--n-terms", type=int, default=2)
    return p


def _check(args):
    if getattr(args, "n_terms", None) is not None and args.n_terms < 2:
        raise InputError("--n-terms must be at least 2")
    if args.threads < 1:
        raise InputError("--threads must be positive")
    if getattr(args, "pade", None) and (min(args.pade) < 0 or sum(args.pade) + 1 > args.n_terms):
        raise InputError("--pade L M needs L, M >= 0 and L + M + 1 <= n-terms")
    if getattr(args, "top", 1) < 1 or getattr(args, "dq_mvar", 1.0) <= 0:
        raise InputError("--top and --dq-mvar must be positive")
    if getattr(args, "ceiling", 2.0) <= 1.0:
        raise InputError("--ceiling must exceed 1")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore")
    try:
        _check(args)
        case = resolve_case(args.case)
        report, text, ok = COMMANDS[args.command](args, case)
    except InputError as exc:
        print(f"helmgrid: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SolveFailure, SolverError, HemError, PadeError, PoleProximityError) as exc:
        print(f"helmgrid: solve failed: {exc}", file=sys.stderr)
        return EXIT_SOLVE
    except Exception as exc:  # noqa: BLE001
        logger.debug("internal error", exc_info=True)
        print(f"helmgrid: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    out = text if args.format == "csv" else dumps({**_header(args, case), **report})
    if args.out:
        try:
            Path(args.out).write_text(out)
        except OSError as exc:
            print(f"helmgrid: cannot write {args.out}: {exc}", file=sys.stderr)
            return EXIT_INPUT
    else:
        sys.stdout.write(out)
    if not ok:
        print(f"helmgrid: {args.command} did not converge", file=sys.stderr)
        return EXIT_SOLVE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
