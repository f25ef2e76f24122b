"""Per-bus V-Q sensitivity from a two-term direction-of-change series, and weak-bus ranking.

Scaling the reactive injection of one PQ bus by ``a * dq`` and differentiating the
embedded voltage at ``a = 0`` gives ``d|V_i|/dQ_i = Re(conj(c0) c1) / (|c0| dq)``, so only
the first two series terms are needed.
"""

from __future__ import annotations

import concurrent.futures as cf
import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from .hem import DirectionOfChange, HemError, ScalingDirection, compute_series, embed
from .modal import SolvedState, newton_solve
from .netmodel import BusKind, NetworkModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SensitivityRecord:
    bus: int
    dv_dq: float  # magnitude of d|V|/dQ_injection, pu/pu
    excluded: bool = False
    reason: str = ""
    sign: int = 1  # sign of d|V|/dQ_injection before taking the magnitude


@dataclass(frozen=True)
class WeakBusRanking:
    records: tuple[SensitivityRecord, ...]
    operating_point: str = "base"
    excluded: tuple[SensitivityRecord, ...] = ()

    @property
    def bus_ids(self) -> list[int]:
        return [r.bus for r in self.records]


def _base_state(model: NetworkModel, state: SolvedState | None) -> SolvedState:
    st = newton_solve(model) if state is None else state
    if not st.converged:
        raise HemError("base case has no converged power-flow solution")
    return st


def _signed_sensitivity(model: NetworkModel, bus: int, dq: float, n_terms: int, v_base) -> float:
    i = model.index_of(bus)
    direction = ScalingDirection.reactive_at(model, bus, dq)
    sol = compute_series(embed(model, DirectionOfChange(direction, v_base)), n_terms)
    c0, c1 = sol.v[i, 0], sol.v[i, 1]
    return float((np.conj(c0) * c1).real / (abs(c0) * dq))


def vq_sensitivity(model: NetworkModel, bus: int, dq: float | None = None, n_terms: int = 2,
                   state: SolvedState | None = None) -> SensitivityRecord:
    """d|V|/dQ at ``bus`` for a reactive injection increment ``dq`` (pu; default 1 MVar).

    The magnitude is reported in ``dv_dq`` and its sign in ``sign``; a stable load bus
    has a positive sign (injecting VArs raises the voltage).
    """
    if model.kinds[model.index_of(bus)] is not BusKind.PQ:
        raise ValueError(f"bus {bus} is not a PQ bus")
    dq = 1.0 / model.base_mva if dq is None else float(dq)
    if not dq > 0:
        raise ValueError("dq must be positive")
    st = _base_state(model, state)
    d = _signed_sensitivity(model, bus, dq, max(2, n_terms), st.v)
    if d <= 0:
        logger.warning("bus %s: non-positive dV/dQ %.3g at the base case", bus, d)
    return SensitivityRecord(bus, abs(d), sign=1 if d >= 0 else -1)


def rank_weak_buses(model: NetworkModel, top_k: int | None = None, dq: float | None = None,
                    n_terms: int = 2, threads: int = 4, operating_point: str = "base") -> WeakBusRanking:
    """PQ buses ordered by descending V-Q sensitivity; ties go to the lower bus id.

    Buses with a positive net reactive injection are left out of the ranking and
    listed in ``excluded``.
    """
    st = _base_state(model, None)
    s = model.s_inject
    eligible, excluded = [], []
    for i in model.pq:
        b = model.buses[i].id
        if s[i].imag > 0:
            excluded.append(SensitivityRecord(b, float("nan"), True, "positive net reactive injection"))
        else:
            eligible.append(b)

    def one(b):
        return vq_sensitivity(model, b, dq, n_terms, st)

    if threads > 1 and len(eligible) > 1:
        with cf.ThreadPoolExecutor(threads) as pool:
            recs = list(pool.map(one, eligible))
    else:
        recs = [one(b) for b in eligible]
    recs.sort(key=lambda r: (-r.dv_dq, r.bus))
    if top_k is not None:
        recs = recs[:top_k]
    return WeakBusRanking(tuple(recs), operating_point, tuple(excluded))


def all_pq_variant(model: NetworkModel, state: SolvedState | None = None) -> NetworkModel:
    """Every PV bus turned into a PQ bus carrying its solved base-case P and Q; slack kept.

    The base operating point is unchanged by the conversion.
    """
    st = _base_state(model, state)
    s = st.v * np.conj(model.ybus @ st.v)
    buses = []
    for i, b in enumerate(model.buses):
        if b.kind is BusKind.PV:
            sp = s[i] / model.scale
            b = dataclasses.replace(b, kind=BusKind.PQ, p_inject=float(sp.real), q_inject=float(sp.imag))
        buses.append(b)
    return model.with_buses(buses)


def scale_reactive_loads(model: NetworkModel, k: float, loads: dict[int, complex]) -> NetworkModel:
    """Multiply every bus's reactive demand by ``k``; generation and active power are untouched.

    ``loads`` maps bus id to demand ``Pd + j Qd`` (pu, consumption-positive), e.g. from
    :func:`helmgrid.netmodel.matpower_loads` on the original case.
    """
    buses = []
    for b in model.buses:
        qd = complex(loads.get(b.id, 0.0)).imag
        if qd and b.kind is not BusKind.SLACK:
            b = dataclasses.replace(b, q_inject=b.q_inject - (k - 1.0) * qd)
        buses.append(b)
    return model.with_buses(buses)
