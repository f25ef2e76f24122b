"""Sigma indices of the two-bus analog and saddle-node bifurcation estimates.

For a slack bus and one PQ bus joined by ``Z``, the normalized voltage ``U = V/V0``
obeys ``U = 1 + sigma / U*`` with ``sigma = Z S* / |V0|^2``; its roots are
``0.5 +- sqrt(0.25 + sigma_r - sigma_i^2) + j sigma_i``. In a full network the same
relation, written with the embedding parameter, defines a sigma series per bus.
"""

from __future__ import annotations

import concurrent.futures as cf
import logging
from dataclasses import dataclass, field

import numpy as np

from .approximant import (
    REAL_ROOT_TOL,
    PadeError,
    PoleProximityError,
    build_pade_robust,
    eval_pade,
    nearest_real_singularity,
)
from .hem import (
    AllScaling,
    DirectionOfChange,
    HemError,
    ScalingDirection,
    compute_series,
    embed,
    bus_mismatch,
)
from .modal import newton_solve
from .netmodel import NetworkModel, scale_injections
from .series import PowerSeries

logger = logging.getLogger(__name__)

DETECTION_THRESHOLD = -1e-9
DEFAULT_SNBP_TERMS = 50
# per-unit; a negative condition counts only at a bus whose evaluated voltage misses its own balance by more
MISMATCH_GUARD = 0.05
# a condition below -NOISE_FLOOR counts regardless of the local balance
NOISE_FLOOR = 1e-3


@dataclass(frozen=True)
class TwoBusEquivalent:
    z: complex
    s: complex
    v0: complex = 1.0

    @property
    def sigma(self) -> complex:
        return sigma_of(self.z, self.s, self.v0)


def sigma_of(z: complex, s: complex, v0: complex = 1.0) -> complex:
    return z * np.conj(s) / abs(v0) ** 2


def sigma_condition(sigma):
    """``0.25 + Re(sigma) - Im(sigma)^2``; negative means no two-bus solution."""
    sigma = np.asarray(sigma)
    return 0.25 + sigma.real - sigma.imag**2


def two_bus_roots(sigma: complex) -> tuple[complex, complex, bool]:
    """High and low roots of ``U = 1 + sigma/U*`` and whether they are real-radicand roots.

    With a negative radicand the pair ``0.5 +- j sqrt(-r) + j sigma_i`` is returned and
    the flag is False (no physical solution: past the nose).
    """
    r = float(sigma_condition(sigma))
    si = complex(sigma).imag
    if r >= 0:
        root = np.sqrt(r)
        return complex(0.5 + root, si), complex(0.5 - root, si), True
    root = np.sqrt(-r)
    return complex(0.5, si + root), complex(0.5, si - root), False


def sigma_from_voltage(u):
    """``U U* - U*``, the sigma that makes ``u`` a root of the two-bus equation."""
    u = np.asarray(u)
    if np.any(u == 0):
        raise ZeroDivisionError("normalized voltage must be nonzero")
    return u * np.conj(u) - np.conj(u)


def sigma_series(u_series: PowerSeries, u_reflected: PowerSeries | None = None) -> PowerSeries:
    """Series of sigma(a) from ``a sigma(a) = (U(a) - 1) U*(a*)``; one term shorter than ``U``.

    ``u_reflected`` is the series of ``U*(a*)`` (conjugated coefficients); it defaults to
    the reflection of ``u_series``.
    """
    if u_reflected is None:
        u_reflected = u_series.reflect()
    if u_series.n_terms != u_reflected.n_terms:
        raise ValueError("U and reflected U series differ in length")
    prod = (u_series - 1.0) * u_reflected
    return prod.shift_down()


@dataclass(frozen=True)
class SigmaIndex:
    bus: int
    sigma: complex
    u: complex

    @property
    def sigma_r(self) -> float:
        return self.sigma.real

    @property
    def sigma_i(self) -> float:
        return self.sigma.imag

    @property
    def condition(self) -> float:
        return float(sigma_condition(self.sigma))

    @classmethod
    def from_voltage(cls, bus: int, u: complex) -> SigmaIndex:
        return cls(bus, complex(sigma_from_voltage(u)), complex(u))


def _pade_at_one(c: np.ndarray) -> complex:
    if not np.any(c[1:]):
        return complex(c[0])
    return complex(eval_pade(build_pade_robust(c), 1.0))


def sigma_indices(model: NetworkModel, lam: float, n_terms: int = DEFAULT_SNBP_TERMS) -> list[SigmaIndex]:
    """Sigma index of every non-slack bus with injections scaled by ``lam``.

    Sigma comes from the Padé approximant of the sigma series at ``a = 1``; ``u`` from that
    of ``U(a)``. Buses whose approximant breaks down get NaN.
    """
    return _sigma_indices(compute_series(embed(model, AllScaling(lam)), n_terms))


def _sigma_indices(sol) -> list[SigmaIndex]:
    model = sol.model
    out = []
    for i, b in enumerate(model.buses):
        if i == model.slack:
            continue
        u_ser = sol.normalized_series(i)
        try:
            sig = _pade_at_one(sigma_series(u_ser).coeffs)
        except (PadeError, PoleProximityError):
            sig = complex(np.nan, np.nan)
        try:
            u = _pade_at_one(u_ser.coeffs)
        except (PadeError, PoleProximityError):
            u = complex(np.nan, np.nan)
        out.append(SigmaIndex(b.id, sig, u))
    return out


def min_condition(indices: list[SigmaIndex]) -> tuple[float, int | None]:
    """Smallest sigma condition and its bus; a NaN condition (broken approximant) counts as -inf."""
    worst, bus = np.inf, None
    for s in indices:
        c = s.condition
        c = -np.inf if np.isnan(c) else c
        if c < worst:
            worst, bus = c, s.bus
    return worst, bus


@dataclass(frozen=True)
class ScanPoint:
    lam: float
    min_condition: float
    bus: int | None
    mismatch: float  # largest per-bus balance miss of the evaluated voltages, pu
    bus_ids: tuple[int, ...] = field(default=(), repr=False)
    conditions: tuple[float, ...] = field(default=(), repr=False)
    local_mismatch: tuple[float, ...] = field(default=(), repr=False)

    def flagged(self, threshold: float = DETECTION_THRESHOLD, guard: float = MISMATCH_GUARD,
                floor: float = NOISE_FLOOR) -> list[tuple[float, int]]:
        """(condition, bus) pairs that count as negative, most negative first.

        A condition below ``threshold`` counts if the bus's own balance miss exceeds
        ``guard`` or the condition is below ``-floor``; NaN counts as ``-inf``.
        """
        out = []
        for b, c, m in zip(self.bus_ids, self.conditions, self.local_mismatch):
            c = -np.inf if np.isnan(c) else c
            if c < threshold and (not m <= guard or c < -floor):
                out.append((c, b))
        return sorted(out)

    def negative(self, threshold: float = DETECTION_THRESHOLD, guard: float = MISMATCH_GUARD,
                 floor: float = NOISE_FLOOR) -> bool:
        return bool(self.flagged(threshold, guard, floor))

    def confirmed(self, guard: float = MISMATCH_GUARD) -> bool:
        """All conditions nonnegative and every bus balanced to within ``guard``."""
        return self.mismatch <= guard and not any(c < 0 or np.isnan(c) for c in self.conditions)


def scan_point(model: NetworkModel, lam: float, n_terms: int = DEFAULT_SNBP_TERMS) -> ScanPoint:
    """Sigma conditions at ``lam`` with the per-bus power-balance miss of the Padé-evaluated
    voltages (``inf`` where a bus failed to evaluate)."""
    scaled = scale_injections(model, lam)
    sol = compute_series(embed(model, AllScaling(lam)), n_terms)
    idx = _sigma_indices(sol)
    worst, bus = min_condition(idx)
    pos = [model.index_of(s.bus) for s in idx]
    v = np.empty(model.n_bus, dtype=complex)
    v[model.slack] = sol.v_slack
    v[pos] = [s.u * sol.v_slack for s in idx]
    with np.errstate(invalid="ignore"):
        loc = bus_mismatch(scaled, v)
    loc = np.where(np.isfinite(loc), loc, np.inf)
    local = tuple(float(loc[k]) for k in pos)
    return ScanPoint(float(lam), worst, bus, max(local, default=0.0), tuple(s.bus for s in idx),
                     tuple(s.condition for s in idx), local)


@dataclass(frozen=True)
class SnbpEstimate:
    lambda_star: float | None
    detecting_bus: int | None
    method: str  # "sigma" or "polezero"
    scan_trace: list[ScanPoint] = field(default_factory=list)
    detected: bool = True
    polezero: SnbpEstimate | None = None


def polezero_estimate(model: NetworkModel, lo: float = 1.0, ceiling: float = 4.0,
                      n_terms: int = DEFAULT_SNBP_TERMS, tol: float = REAL_ROOT_TOL) -> SnbpEstimate:
    """Nearest positive real Padé pole/zero over all bus voltages, as a loading.

    Injections move linearly from ``lo`` (solved by Newton-Raphson) to ``ceiling`` along a
    direction-of-change embedding, so ``a`` maps to ``lo + a (ceiling - lo)``.
    """
    start = scale_injections(model, lo)
    st = newton_solve(start)
    if not st.converged:
        raise HemError(f"no converged operating point at lambda={lo}")
    mask = np.arange(model.n_bus) != model.slack
    direction = ScalingDirection((ceiling - lo) * model.s_inject * mask)
    sol = compute_series(embed(start, DirectionOfChange(direction, st.v)), n_terms)
    best, bus = None, None
    for i, b in enumerate(model.buses):
        if i == model.slack:
            continue
        try:
            r = nearest_real_singularity(sol.v[i], tol=tol).nearest_positive_real
        except PadeError:
            continue
        if r is not None and (best is None or r < best):
            best, bus = r, b.id
    if best is None:
        return SnbpEstimate(None, None, "polezero", detected=False)
    return SnbpEstimate(lo + best * (ceiling - lo), bus, "polezero")


def estimate_snbp(model: NetworkModel, lo: float = 1.0, ceiling: float = 4.0, coarse_steps: int = 16,
                  resolution: float = 5e-3, n_terms: int = DEFAULT_SNBP_TERMS,
                  threshold: float = DETECTION_THRESHOLD, guard: float = MISMATCH_GUARD,
                  floor: float = NOISE_FLOOR, threads: int = 1, with_polezero: bool = True) -> SnbpEstimate:
    """Smallest scanned loading at which some bus's sigma condition turns negative.

    A coarse grid on ``[lo, ceiling]`` runs up to its first negative point. From the last
    confirmed point below it (see :meth:`ScanPoint.confirmed`) loadings grow by the factor
    ``1 + resolution`` until one is negative, or the coarse negative point is reached.

    Negativity is judged per bus (:meth:`ScanPoint.flagged`): a solved state cannot have a
    negative condition, so a small negative value at a bus that still balances is
    truncation noise. Pass ``guard=-1`` to disable the guard.
    """
    trace: dict[float, ScanPoint] = {}
    pool = cf.ThreadPoolExecutor(threads) if threads > 1 else None

    def probe_many(lams: list[float]) -> list[ScanPoint]:
        todo = [x for x in lams if x not in trace]
        pts = pool.map(lambda x: scan_point(model, x, n_terms), todo) if pool else \
            (scan_point(model, x, n_terms) for x in todo)
        for pt in pts:
            trace[pt.lam] = pt
        return [trace[x] for x in lams]

    def neg(pt: ScanPoint) -> bool:
        return pt.negative(threshold, guard, floor)

    try:
        grid = [float(x) for x in np.linspace(lo, ceiling, coarse_steps + 1)]
        good = bad = None
        for pt in probe_many(grid):
            if neg(pt):
                bad = pt.lam
                break
            if pt.mismatch <= guard:
                good = pt.lam
        star = None
        if bad is not None and good is None:
            logger.warning("sigma condition already negative at the lower bracket %s", lo)
            star = bad
        elif bad is not None:
            lams = []
            x = good * (1.0 + resolution)
            while x < bad:
                lams.append(x)
                x *= 1.0 + resolution
            lams.append(bad)
            chunk = max(threads, 1)
            for k in range(0, len(lams), chunk):
                hit = [pt.lam for pt in probe_many(lams[k : k + chunk]) if neg(pt)]
                if hit:
                    star = hit[0]
                    break
    finally:
        if pool:
            pool.shutdown()
    pz = polezero_estimate(model, lo, ceiling, n_terms) if with_polezero else None
    # report what a sequential scan visits, so the trace does not depend on ``threads``
    last = ceiling if bad is None else bad
    on_grid = set(grid)
    pts = sorted((p for p in trace.values()
                  if p.lam <= last and (p.lam in on_grid or star is None or p.lam <= star)),
                 key=lambda p: p.lam)
    if star is None:
        return SnbpEstimate(None, None, "sigma", pts, False, pz)
    return SnbpEstimate(star, trace[star].flagged(threshold, guard, floor)[0][1], "sigma", pts, True, pz)
