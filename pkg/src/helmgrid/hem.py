"""Holomorphically embedded power flow.

Two embeddings are provided.

``AllScaling(lam)``
    Branch shunts, bus shunts and tap asymmetry are split off the admittance matrix
    (``Y = Ytr + diag(ysh)`` with ``Ytr`` having zero row sums) and scaled with the
    injections, so the germ at ``a = 0`` is flat (every bus at the slack voltage):

    * PQ: ``Ytr V(a) = a lam S* W(a) - a ysh V(a)``
    * PV: ``Ytr V(a) = a lam P W(a) - j Q(a) W(a) - a ysh V(a)``,
      ``V(a) V*(a*) = |V0|^2 + a (|Vset|^2 - |V0|^2)``

``DirectionOfChange(delta_s)``
    The germ is the solved base case and the injections move along ``delta_s``:

    * PQ: ``Y V(a) = (S + a dS)* W(a)``
    * PV: ``Y V(a) = (P + a dP - j Q(a)) W(a)``, ``V(a) V*(a*) = |Vset|^2``

In both, ``W(a)`` stands for ``1 / V*(a*)`` and is carried as its own series. Every
order ``n >= 1`` is a real-linear system in ``(Re V[n], Im V[n], Q_pv[n])`` whose
matrix does not depend on ``n``; it is factorised once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .approximant import PadeError, PoleProximityError, build_pade_robust, eval_pade
from .netmodel import NetworkModel
from .series import PowerSeries


class HemError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScalingDirection:
    delta_s: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "delta_s", np.asarray(self.delta_s, dtype=complex))

    @classmethod
    def reactive_at(cls, model: NetworkModel, bus_id: int, dq: float) -> ScalingDirection:
        d = np.zeros(model.n_bus, dtype=complex)
        d[model.index_of(bus_id)] = 1j * dq
        return cls(d)


@dataclass(frozen=True)
class AllScaling:
    lambda_target: float = 1.0


@dataclass(frozen=True)
class DirectionOfChange:
    direction: ScalingDirection
    base_voltage: np.ndarray | None = None  # solved base case; Newton-Raphson is run if absent


@dataclass(frozen=True, eq=False)
class EmbeddedSystem:
    model: NetworkModel
    mode: AllScaling | DirectionOfChange
    v0: np.ndarray  # germ voltages
    q0: np.ndarray  # germ reactive injections (PV rows meaningful)
    lu: object = field(repr=False)
    ns: np.ndarray = field(repr=False)  # non-slack bus indices
    germ_residual: float = 0.0


@dataclass(frozen=True, eq=False)
class HemSolution:
    model: NetworkModel
    mode: AllScaling | DirectionOfChange
    v: np.ndarray  # (n_bus, n_terms) voltage coefficients
    w: np.ndarray  # (n_bus, n_terms) coefficients of 1/V*(a*)
    q: np.ndarray  # (n_bus, n_terms) PV reactive injection coefficients (zero elsewhere)
    germ_residual: float

    @property
    def n_terms(self) -> int:
        return self.v.shape[1]

    @property
    def v_slack(self) -> complex:
        return self.v[self.model.slack, 0]

    def voltage_series(self, i: int) -> PowerSeries:
        return PowerSeries(self.v[i])

    def normalized_series(self, i: int) -> PowerSeries:
        """``U_i(a) = V_i(a) / V0``."""
        return PowerSeries(self.v[i] / self.v_slack)

    def reflected_series(self, i: int) -> PowerSeries:
        return PowerSeries(self.w[i])

    def evaluate(self, alpha: float, method: str = "pade", strict: bool = True, order=None) -> np.ndarray:
        return evaluate_solution(self, alpha, method, strict, order)


def _validate(model: NetworkModel, mode):
    if isinstance(mode, DirectionOfChange):
        d = mode.direction.delta_s
        if d.shape != (model.n_bus,):
            raise HemError(f"direction has {d.size} entries for {model.n_bus} buses")
        if d[model.slack] != 0:
            raise HemError("direction has a nonzero slack increment")
    elif not isinstance(mode, AllScaling):
        raise TypeError(f"unknown embedding mode {mode!r}")
    for k in model.pv:
        if not model.buses[k].v_setpoint > 0:
            raise HemError(f"PV bus {model.buses[k].id} has no voltage setpoint")


def _operator(a: sp.spmatrix, d: np.ndarray, e: np.ndarray, v0: np.ndarray, pv_pos: np.ndarray):
    """Real block matrix for ``a V + d conj(V) + j e Q`` plus the PV magnitude rows.

    ``a`` is restricted to non-slack buses; ``pv_pos`` indexes PV buses within them.
    """
    n = a.shape[0]
    npv = pv_pos.size
    ar, ai = a.real, a.imag
    dr, di = sp.diags(d.real), sp.diags(d.imag)
    ep = sp.csr_matrix((e[pv_pos], (pv_pos, np.arange(npv))), shape=(n, npv))
    top = sp.hstack([ar + dr, -ai + di, -ep.imag])
    mid = sp.hstack([ai + di, ar - dr, ep.real])
    vs = v0[pv_pos]
    rows = np.arange(npv)
    bot = sp.hstack(
        [
            sp.csr_matrix((2 * vs.real, (rows, pv_pos)), shape=(npv, n)),
            sp.csr_matrix((2 * vs.imag, (rows, pv_pos)), shape=(npv, n)),
            sp.csr_matrix((npv, npv)),
        ]
    )
    return sp.vstack([top, mid, bot]).tocsc()


def embed(model: NetworkModel, mode) -> EmbeddedSystem:
    """Germ and factorised order-independent operator for ``mode``."""
    _validate(model, mode)
    n = model.n_bus
    slack = model.slack
    ns = np.array([k for k in range(n) if k != slack], dtype=int)
    pv = model.pv
    is_pv = np.zeros(n, bool)
    is_pv[pv] = True
    pv_pos = np.flatnonzero(is_pv[ns])
    y = model.ybus.tocsr()
    q0 = np.zeros(n)

    if isinstance(mode, AllScaling):
        ysh = np.asarray(y.sum(axis=1)).ravel()
        ytr = (y - sp.diags(ysh)).tocsr()
        v0 = np.full(n, model.v_slack, dtype=complex)
        a = ytr[ns][:, ns]
        d = np.zeros(ns.size, dtype=complex)
        germ_residual = float(np.max(np.abs(ytr @ v0), initial=0.0))
    else:
        v0 = mode.base_voltage
        if v0 is None:
            from .modal import newton_solve

            st = newton_solve(model)
            if not st.converged:
                raise HemError("base case does not converge; no germ for direction-of-change")
            v0 = st.v
        v0 = np.asarray(v0, dtype=complex)
        s = model.s_inject
        q0 = np.where(is_pv, (v0 * np.conj(y @ v0)).imag, 0.0)
        sb = np.where(is_pv, s.real + 1j * q0, s)
        w0 = 1.0 / np.conj(v0)
        a = y[ns][:, ns]
        d = (np.conj(sb) * w0 / np.conj(v0))[ns]
        mis = v0 * np.conj(y @ v0) - sb
        mis[slack] = 0.0
        germ_residual = float(np.max(np.abs(mis)))

    e = (1.0 / np.conj(v0))[ns]
    op = _operator(a, d, e, v0[ns], pv_pos)
    try:
        lu = spla.splu(op)
    except RuntimeError as exc:
        raise HemError(f"singular germ operator: {exc}") from exc
    return EmbeddedSystem(model, mode, v0, q0, lu, ns, germ_residual)


def _wpart(v, w, i, n):
    """``W[n]`` without its ``conj(V[n])`` term: ``-sum_{m=1}^{n-1} conj(V[m]) W[n-m] / conj(V[0])``."""
    if n < 2:
        return np.zeros(v.shape[0], dtype=complex)[i]
    acc = np.einsum("ij,ij->i", np.conj(v[i, 1:n]), w[i, n - 1 : 0 : -1])
    return -acc / np.conj(v[i, 0])


def compute_series(system: EmbeddedSystem, n_terms: int) -> HemSolution:
    """Voltage series coefficients ``V[0..n_terms-1]`` for every bus."""
    if n_terms < 1:
        raise ValueError("n_terms must be positive")
    model, mode = system.model, system.mode
    n = model.n_bus
    ns = system.ns
    pv = model.pv
    nns = ns.size
    is_pv = np.zeros(n, bool)
    is_pv[pv] = True
    pv_ns = is_pv[ns]

    v = np.zeros((n, n_terms), dtype=complex)
    w = np.zeros((n, n_terms), dtype=complex)
    q = np.zeros((n, n_terms))
    v[:, 0] = system.v0
    w[:, 0] = 1.0 / np.conj(system.v0)
    q[:, 0] = system.q0
    s = model.s_inject
    y = model.ybus.tocsr()

    if isinstance(mode, AllScaling):
        lam = mode.lambda_target
        ysh = np.asarray(y.sum(axis=1)).ravel()
        # PV rows get lam*P, PQ rows lam*S*
        sconj = lam * np.where(is_pv, s.real, np.conj(s))
        dvsq = model.v_set**2 - abs(model.v_slack) ** 2
    else:
        ds = mode.direction.delta_s
        dconj = np.where(is_pv, ds.real, np.conj(ds))
        sb = np.where(is_pv, s.real - 1j * system.q0, np.conj(s))  # base conj injection

    for k in range(1, n_terms):
        wp = _wpart(v, w, ns, k)
        # PV cross terms  -j sum_{m=1}^{k-1} Q[m] W[k-m]
        if k >= 2:
            cross = -1j * np.einsum("ij,ij->i", q[ns, 1:k], w[ns, k - 1 : 0 : -1])
        else:
            cross = np.zeros(nns, dtype=complex)
        cross = np.where(pv_ns, cross, 0.0)
        if isinstance(mode, AllScaling):
            rhs = sconj[ns] * w[ns, k - 1] - ysh[ns] * v[ns, k - 1] + cross
        else:
            # -j Q[0] W[k] is split like conj(S) W[k]; its known part lives in sb * wp
            rhs = dconj[ns] * w[ns, k - 1] + sb[ns] * wp + cross
        # PV magnitude rows
        vpv = v[ns][pv_ns]
        if k >= 2:
            mag = -np.einsum("ij,ij->i", vpv[:, 1:k], np.conj(vpv[:, k - 1 : 0 : -1])).real
        else:
            mag = np.zeros(vpv.shape[0])
        if isinstance(mode, AllScaling) and k == 1:
            mag = mag + dvsq[ns][pv_ns]
        b = np.r_[rhs.real, rhs.imag, mag]
        x = system.lu.solve(b)
        vk = x[:nns] + 1j * x[nns : 2 * nns]
        v[ns, k] = vk
        q[ns[pv_ns], k] = x[2 * nns :]
        w[ns, k] = wp - np.conj(vk) * w[ns, 0] / np.conj(v[ns, 0])
        # slack column: V constant, W constant
    return HemSolution(model, mode, v, w, q, system.germ_residual)


def solve_hem(model: NetworkModel, mode=None, n_terms: int = 50) -> HemSolution:
    return compute_series(embed(model, AllScaling(1.0) if mode is None else mode), n_terms)


def evaluate_solution(sol: HemSolution, alpha: float, method: str = "pade", strict: bool = True,
                      order: tuple[int, int] | None = None) -> np.ndarray:
    """Per-bus voltages at ``alpha``.

    ``method='direct'`` sums the truncated series; ``'pade'`` uses the Padé approximant
    of every bus, near-diagonal unless ``order = (L, M)`` is given. With ``strict=False``
    failing buses come back as NaN; otherwise a :class:`PadeError` names them.
    """
    method = method.lower()
    if method in ("direct", "directsum"):
        return np.polyval(sol.v[:, ::-1].T, alpha) if sol.n_terms > 1 else sol.v[:, 0].copy()
    if method != "pade":
        raise ValueError(f"unknown evaluation method {method!r}")
    if alpha == 0:
        return sol.v[:, 0].copy()
    out = np.empty(sol.model.n_bus, dtype=complex)
    failed = []
    for i in range(sol.model.n_bus):
        c = sol.v[i]
        if np.all(c[1:] == 0):
            out[i] = c[0]
            continue
        try:
            out[i] = eval_pade(build_pade_robust(c, order), alpha)
        except (PadeError, PoleProximityError):
            out[i] = np.nan
            failed.append(sol.model.buses[i].id)
    if failed and strict:
        raise PadeError(f"Padé evaluation failed at buses {failed}")
    return out


def bus_mismatch(model: NetworkModel, v: np.ndarray, s: np.ndarray | None = None) -> np.ndarray:
    """Per-bus power-balance miss, per-unit; NaN voltages give NaN.

    PQ: ``|S - V (YV)*|``; PV: ``|dP| + ||V| - Vset|``; slack: ``|V - V0|``. ``s``
    overrides the model's scheduled injections.
    """
    v = np.asarray(v, dtype=complex)
    if v.shape != (model.n_bus,):
        raise ValueError("voltage vector has the wrong dimension")
    s = model.s_inject if s is None else np.asarray(s, dtype=complex)
    mis = v * np.conj(model.ybus @ v) - s
    out = np.abs(mis)
    pv = model.pv
    out[pv] = np.abs(mis[pv].real) + np.abs(np.abs(v[pv]) - model.v_set[pv])
    out[model.slack] = abs(v[model.slack] - model.v_slack)
    return out


def power_balance_residual(model: NetworkModel, v: np.ndarray, s: np.ndarray | None = None) -> float:
    """Largest :func:`bus_mismatch` over buses (``inf`` if any is not finite)."""
    r = np.max(bus_mismatch(model, v, s))
    return float(r) if np.isfinite(r) else float("inf")
