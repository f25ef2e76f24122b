"""Padé approximants of power series and their real poles/zeros."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la

from .series import PowerSeries

REAL_ROOT_TOL = 1e-3
DOUBLET_TOL = 1e-6
TAIL_RTOL = 1e-14


class PadeError(ArithmeticError):
    """Defective Padé table entry (singular linear system)."""


class PoleProximityError(ArithmeticError):
    pass


@dataclass(frozen=True)
class PadeApproximant:
    num_coeffs: np.ndarray
    den_coeffs: np.ndarray

    @property
    def order(self) -> tuple[int, int]:
        return self.num_coeffs.size - 1, self.den_coeffs.size - 1

    def __call__(self, alpha):
        return eval_pade(self, alpha)

    def taylor(self, n: int) -> np.ndarray:
        """First ``n`` Maclaurin coefficients of num/den.

        Direct recurrence t_k = a_k - sum_j b_j t_{k-j}; no reciprocal series is formed.
        """
        num, den = np.asarray(self.num_coeffs), np.asarray(self.den_coeffs)
        t = np.zeros(n, dtype=complex)
        for k in range(n):
            m = min(k, den.size - 1)
            t[k] = (num[k] if k < num.size else 0.0) - np.dot(den[1 : m + 1], t[k - 1 :: -1][:m])
        return t


def _pad(c, n):
    out = np.zeros(n, dtype=complex)
    m = min(n, len(c))
    out[:m] = c[:m]
    return out


def default_order(n_terms: int) -> tuple[int, int]:
    m = n_terms // 2
    return n_terms - 1 - m, m


def build_pade(series, order: tuple[int, int] | None = None) -> PadeApproximant:
    """[L/M] approximant from the linear Toeplitz system, denominator normalised to ``b[0] = 1``."""
    c = series.coeffs if isinstance(series, PowerSeries) else np.asarray(series, dtype=complex)
    L, M = default_order(c.size) if order is None else order
    if L < 0 or M < 0:
        raise ValueError(f"invalid Padé order ({L}, {M})")
    if c.size < L + M + 1:
        raise ValueError(f"[{L}/{M}] needs {L + M + 1} coefficients, got {c.size}")
    c = c[: L + M + 1]
    if M == 0:
        return PadeApproximant(c[: L + 1].copy(), np.ones(1, dtype=complex))
    # row k (k = 1..M):  sum_{j=1..M} b_j c[L+k-j] = -c[L+k]; c[i<0] = 0
    col = c[L : L + M]
    row = np.array([c[L - j] if L - j >= 0 else 0.0 for j in range(M)], dtype=complex)
    rhs = -c[L + 1 : L + M + 1]
    if not np.any(rhs) and not np.any(col):
        b = np.zeros(M, dtype=complex)
    else:
        # LU with partial pivoting; the Toeplitz systems of convergent series are routinely
        # ill-conditioned without being defective, so only exact breakdown is rejected
        t = la.toeplitz(col, row)
        if not np.all(np.isfinite(t)):
            raise PadeError(f"non-finite coefficients in the [{L}/{M}] Padé system")
        getrf, = la.get_lapack_funcs(("getrf",), (t,))
        lu, piv, info = getrf(t)
        if info != 0 or np.any(np.diag(lu) == 0):
            raise PadeError(f"singular [{L}/{M}] Padé system")
        with np.errstate(all="ignore"):
            b = la.lu_solve((lu, piv), rhs, check_finite=False)
        if not np.all(np.isfinite(b)):
            raise PadeError(f"non-finite [{L}/{M}] Padé denominator")
    den = np.r_[1.0 + 0j, b]
    num = np.array([np.dot(den[: min(k, M) + 1], c[k :: -1][: min(k, M) + 1]) for k in range(L + 1)])
    return PadeApproximant(num, den)


def trim_tail(c: np.ndarray, rtol: float = TAIL_RTOL) -> np.ndarray:
    """Drop trailing coefficients below ``rtol * max|c|``; they only feed roundoff into the table."""
    big = np.flatnonzero(np.abs(c) > rtol * np.max(np.abs(c), initial=0.0))
    return c[: big[-1] + 1] if big.size else c[:1]


def build_pade_robust(series, order=None, max_reductions: int | None = None) -> PadeApproximant:
    """``build_pade`` falling back to (L-1, M-1) on a defective table entry.

    Without an explicit ``order`` the negligible tail is trimmed first and the
    near-diagonal order of what remains is used. Reduction continues until a degree
    reaches zero unless ``max_reductions`` caps it; an exactly rational series of low
    degree needs many steps.
    """
    c = series.coeffs if isinstance(series, PowerSeries) else np.asarray(series, dtype=complex)
    if order is None:
        c = trim_tail(c)
    L, M = default_order(c.size) if order is None else order
    steps = min(L, M) if max_reductions is None else max_reductions
    for _ in range(steps + 1):
        try:
            return build_pade(c, (L, M))
        except PadeError:
            if L == 0 or M == 0:
                break
            L, M = L - 1, M - 1
    raise PadeError("no usable Padé approximant after degree reduction")


def eval_pade(pa: PadeApproximant, alpha):
    den = np.polyval(pa.den_coeffs[::-1], alpha)
    if np.any(np.abs(den) < 1e-14):
        raise PoleProximityError(f"denominator vanishes at alpha={alpha}")
    return np.polyval(pa.num_coeffs[::-1], alpha) / den


@dataclass(frozen=True)
class SingularityReport:
    poles: np.ndarray
    zeros: np.ndarray
    nearest_positive_real: float | None


def convergence_radius(c: np.ndarray) -> float:
    """Root-test estimate from a log-linear fit over the second half of the nonzero coefficients."""
    k = np.flatnonzero(np.abs(c) > 0)
    k = k[k >= max(1, c.size // 2)]
    if k.size < 2:
        return 1.0
    slope = np.polyfit(k, np.log(np.abs(c[k])), 1)[0]
    return float(np.exp(-slope)) if np.isfinite(slope) else 1.0


def _real_positive(roots, tol):
    roots = roots[np.isfinite(roots)]
    keep = np.abs(roots.imag) <= tol * np.abs(roots)
    r = roots[keep].real
    return np.sort(r[r > 0])


def nearest_real_singularity(series, order=None, tol: float = REAL_ROOT_TOL,
                             doublet_tol: float = DOUBLET_TOL) -> SingularityReport:
    """Positive real poles and zeros of the Padé approximant, via companion-matrix roots.

    Pole/zero pairs closer than ``doublet_tol`` (relative) cancel and are discarded. The
    variable is rescaled by the estimated radius of convergence first, so strongly
    growing or decaying coefficients do not swamp the Toeplitz system.
    """
    c = series.coeffs if isinstance(series, PowerSeries) else np.asarray(series, dtype=complex)
    c = trim_tail(c) if order is None else c
    r = convergence_radius(c)
    pa = build_pade_robust(c * r ** np.arange(c.size), order)
    poles = np.roots(pa.den_coeffs[::-1]) if pa.den_coeffs.size > 1 else np.empty(0, complex)
    zeros = np.roots(pa.num_coeffs[::-1]) if pa.num_coeffs.size > 1 else np.empty(0, complex)
    if poles.size and zeros.size:
        gap = np.abs(poles[:, None] - zeros[None, :])
        scale = np.maximum(np.abs(poles)[:, None], 1.0)
        bad = gap <= doublet_tol * scale
        poles = poles[~bad.any(axis=1)]
        zeros = zeros[~bad.any(axis=0)]
    poles, zeros = poles * r, zeros * r
    rp, rz = _real_positive(poles, tol), _real_positive(zeros, tol)
    both = np.r_[rp, rz]
    return SingularityReport(rp, rz, float(both.min()) if both.size else None)
