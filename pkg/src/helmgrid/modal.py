"""Classical oracles: Newton-Raphson power flow, collapse-point bisection, modal analysis."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import stats

from .netmodel import NetworkModel, scale_injections


class SolverError(RuntimeError):
    pass


class SingularJacobianError(SolverError):
    pass


class BracketError(SolverError):
    """Collapse bracket does not straddle the nose; ``side`` is ``"lo"`` or ``"hi"``."""

    def __init__(self, message: str, side: str):
        super().__init__(message)
        self.side = side


@dataclass(frozen=True)
class SolvedState:
    v: np.ndarray
    converged: bool
    iterations: int
    max_mismatch: float
    singular: bool = False


def flat_start(model: NetworkModel) -> np.ndarray:
    v = np.ones(model.n_bus, dtype=complex)
    gen = np.r_[model.pv, model.slack]
    v[gen] = model.v_set[gen]
    v[model.slack] = model.v_slack
    return v


def dsbus_dv(ybus, v):
    """Partial derivatives of bus injections w.r.t. voltage angle and magnitude (polar)."""
    ibus = ybus @ v
    dv = sp.diags(v)
    di = sp.diags(ibus)
    dvn = sp.diags(v / np.abs(v))
    ds_dvm = dv @ (ybus @ dvn).conj() + di.conj() @ dvn
    ds_dva = 1j * dv @ (di - ybus @ dv).conj()
    return ds_dva.tocsr(), ds_dvm.tocsr()


def mismatch(model: NetworkModel, v: np.ndarray) -> np.ndarray:
    """Complex mismatch ``V (Y V)^* - S`` per bus."""
    return v * np.conj(model.ybus @ v) - model.s_inject


def _max_mismatch(model, v, pvpq, pq):
    mis = mismatch(model, v)
    return max(np.max(np.abs(mis.real[pvpq]), initial=0.0), np.max(np.abs(mis.imag[pq]), initial=0.0))


def newton_solve(model: NetworkModel, v0=None, tol: float = 1e-10, max_iter: int = 30) -> SolvedState:
    """Polar Newton-Raphson; PV magnitudes and slack voltage held at their setpoints."""
    pv, pq = model.pv, model.pq
    pvpq = np.r_[pv, pq]
    v = flat_start(model) if v0 is None else np.array(v0, dtype=complex)
    vm, va = np.abs(v), np.angle(v)
    npvpq = len(pvpq)
    err = _max_mismatch(model, v, pvpq, pq)
    for it in range(1, max_iter + 1):
        if err <= tol:
            return SolvedState(v, True, it - 1, err)
        if np.any(np.abs(v) == 0):
            # polar Jacobian undefined at a zero-magnitude voltage
            return SolvedState(v, False, it, err, singular=True)
        mis = mismatch(model, v)
        f = np.r_[mis.real[pvpq], mis.imag[pq]]
        ds_dva, ds_dvm = dsbus_dv(model.ybus, v)
        jac = sp.vstack(
            [
                sp.hstack([ds_dva[pvpq][:, pvpq].real, ds_dvm[pvpq][:, pq].real]),
                sp.hstack([ds_dva[pq][:, pvpq].imag, ds_dvm[pq][:, pq].imag]),
            ]
        ).tocsc()
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            try:
                dx = spla.spsolve(jac, f)
            except (spla.MatrixRankWarning, RuntimeError):
                return SolvedState(v, False, it, err, singular=True)
        if not np.all(np.isfinite(dx)):
            return SolvedState(v, False, it, err, singular=True)
        va[pvpq] -= dx[:npvpq]
        vm[pq] -= dx[npvpq:]
        v = vm * np.exp(1j * va)
        err = _max_mismatch(model, v, pvpq, pq)
        if not np.isfinite(err):
            return SolvedState(v, False, it, err)
    return SolvedState(v, err <= tol, max_iter, err)


def bisect_collapse(model: NetworkModel, lo: float = 1.0, hi: float = 4.0, tol: float = 1e-3) -> float:
    """Largest injection scaling at which Newton-Raphson still converges, to within ``tol``.

    Each trial warm-starts from the last converged state, which keeps the solver on the
    high-voltage branch close to the nose.
    """
    st = newton_solve(scale_injections(model, lo))
    if not st.converged:
        raise BracketError(f"Newton-Raphson does not converge at the lower bracket {lo}", "lo")
    if newton_solve(scale_injections(model, hi), v0=st.v).converged:
        raise BracketError(f"Newton-Raphson converges at the upper bracket {hi}", "hi")
    v_ok = st.v
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        trial = newton_solve(scale_injections(model, mid), v0=v_ok)
        if trial.converged:
            lo, v_ok = mid, trial.v
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# modal analysis

def reduced_jacobian(model: NetworkModel, state: SolvedState) -> np.ndarray:
    """Q-V reduced Jacobian ``J_QV - J_Qθ J_Pθ^-1 J_PV`` over the PQ buses (dense)."""
    if not state.converged:
        raise SolverError("reduced Jacobian needs a converged state")
    pv, pq = model.pv, model.pq
    pvpq = np.r_[pv, pq]
    ds_dva, ds_dvm = dsbus_dv(model.ybus, state.v)
    j_pt = ds_dva[pvpq][:, pvpq].real.toarray()
    j_pv = ds_dvm[pvpq][:, pq].real.toarray()
    j_qt = ds_dva[pq][:, pvpq].imag.toarray()
    j_qv = ds_dvm[pq][:, pq].imag.toarray()
    try:
        lu = la.lu_factor(j_pt, check_finite=True)
    except (la.LinAlgError, ValueError) as exc:
        raise SingularJacobianError(str(exc)) from exc
    if np.min(np.abs(np.diag(lu[0]))) < 1e-14 * np.max(np.abs(j_pt)):
        raise SingularJacobianError("J_Ptheta is singular")
    return j_qv - j_qt @ la.lu_solve(lu, j_pv)


@dataclass(frozen=True)
class ModalResult:
    eigenvalues: np.ndarray
    participation: np.ndarray  # (n_bus_in_jr, k), columns sum to 1
    bus_ids: np.ndarray
    right: np.ndarray = field(repr=False)
    left: np.ndarray = field(repr=False)

    @property
    def weakest_buses(self) -> list[int]:
        order = np.lexsort((self.bus_ids, -self.participation[:, 0]))
        return [int(b) for b in self.bus_ids[order]]


def participation_factors(jr: np.ndarray, k: int = 1, bus_ids=None) -> ModalResult:
    """Eigen-decomposition of ``jr`` with bus participation factors for the ``k`` smallest modes.

    Participation of bus i in mode j is ``right[i, j] * left[j, i]`` with ``left = right^-1``,
    normalised so each mode's factors sum to one.
    """
    jr = np.asarray(jr, dtype=float)
    n = jr.shape[0]
    bus_ids = np.arange(n) if bus_ids is None else np.asarray(bus_ids)
    try:
        lam, right = la.eig(jr)
    except la.LinAlgError as exc:
        raise SolverError(f"eigen-decomposition failed: {exc}") from exc
    scale = max(1.0, np.max(np.abs(lam)))
    if np.max(np.abs(lam.imag)) > 1e-9 * scale:
        raise SolverError("reduced Jacobian has complex eigenvalues")
    lam = lam.real
    order = np.argsort(lam)
    lam, right = lam[order], right[:, order].real
    left = la.inv(right)
    p = right[:, :k] * left[:k, :].T
    p = p / p.sum(axis=0)
    return ModalResult(lam, p, bus_ids, right, left)


def modal_analysis(model: NetworkModel, state: SolvedState | None = None, k: int = 1) -> ModalResult:
    state = newton_solve(model) if state is None else state
    jr = reduced_jacobian(model, state)
    return participation_factors(jr, k=k, bus_ids=model.bus_ids[model.pq])


@dataclass(frozen=True)
class RankingAgreement:
    exact_match: bool
    kendall_tau: float
    position_diff: list[tuple[int, int, int]]  # (position, hem bus, modal bus) where they differ


def compare_rankings(hem, modal, top_k: int = 5) -> RankingAgreement:
    """Compare two weak-bus orderings over their first ``top_k`` entries.

    ``hem`` / ``modal`` may be ranking objects or plain bus-id sequences.
    """
    a = list(getattr(hem, "bus_ids", hem))[:top_k]
    b = list(getattr(modal, "weakest_buses", modal))[:top_k]
    diff = [(i, x, y) for i, (x, y) in enumerate(zip(a, b)) if x != y]
    # tau over the union, with buses absent from a list ranked after its last entry
    union = list(dict.fromkeys(a + b))
    ra = [a.index(u) if u in a else len(a) for u in union]
    rb = [b.index(u) if u in b else len(b) for u in union]
    tau = float(stats.kendalltau(ra, rb).statistic) if len(union) > 1 else 1.0
    return RankingAgreement(a == b, tau, diff)
