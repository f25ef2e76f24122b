"""Independent reference computations used only by the tests.

Each one is written from first principles without touching the library code it checks.
"""

from __future__ import annotations

import numpy as np
from scipy import optimize


def brute_ybus(model) -> np.ndarray:
    """Dense Y-bus built element by element from the pi model of each branch."""
    n = model.n_bus
    pos = {b.id: k for k, b in enumerate(model.buses)}
    y = np.zeros((n, n), dtype=complex)
    for br in model.branches:
        if not br.in_service:
            continue
        f, t = pos[br.from_bus], pos[br.to_bus]
        ys = 1.0 / br.series_z
        bc = 1j * br.charging_b / 2.0
        tap = complex(br.tap)
        y[f, f] += (ys + bc) / (tap * np.conj(tap))
        y[t, t] += ys + bc
        y[f, t] += -ys / np.conj(tap)
        y[t, f] += -ys / tap
    for k, b in enumerate(model.buses):
        y[k, k] += b.shunt_g + 1j * b.shunt_b
    return y


def fsolve_power_flow(model, v_start=None) -> np.ndarray:
    """Rectangular-coordinate power flow solved with MINPACK (``scipy.optimize.fsolve``)."""
    y = brute_ybus(model)
    n = model.n_bus
    kinds = [b.kind.value for b in model.buses]
    s = np.array([b.p_inject + 1j * b.q_inject for b in model.buses]) * model.scale
    slack = kinds.index("slack")
    sb = model.buses[slack]
    vs = sb.v_setpoint * np.exp(1j * sb.v0_angle)
    free = [k for k in range(n) if k != slack]
    x0 = np.empty(2 * len(free))
    start = np.ones(n, complex) * vs if v_start is None else np.asarray(v_start, complex)
    x0[: len(free)] = start[free].real
    x0[len(free):] = start[free].imag

    def unpack(x):
        v = np.empty(n, complex)
        v[slack] = vs
        v[free] = x[: len(free)] + 1j * x[len(free):]
        return v

    def resid(x):
        v = unpack(x)
        sc = v * np.conj(y @ v)
        out = []
        for k in free:
            b = model.buses[k]
            out.append(sc[k].real - s[k].real)
            if kinds[k] == "pv":
                out.append(abs(v[k]) ** 2 - b.v_setpoint**2)
            else:
                out.append(sc[k].imag - s[k].imag)
        return np.array(out)

    x, info, ier, msg = optimize.fsolve(resid, x0, full_output=True, xtol=1e-13)
    if ier != 1 or np.max(np.abs(resid(x))) > 1e-9:
        raise RuntimeError(f"oracle power flow failed: {msg}")
    return unpack(x)


def two_bus_high_root(sigma: complex) -> complex:
    """High-voltage root of ``U = 1 + sigma / conj(U)``, written out component-wise."""
    sr, si = sigma.real, sigma.imag
    return complex(0.5 + np.sqrt(0.25 + sr - si * si), si)


def two_bus_maclaurin(sigma: complex, n: int) -> np.ndarray:
    """Maclaurin coefficients of ``U(a)`` for ``sigma -> a sigma`` by numerical contour integration.

    ``U(a) = 0.5 + sqrt(0.25 + a sr - a^2 si^2) + j a si``; the circle radius stays
    inside the convergence disc.
    """
    sr, si = sigma.real, sigma.imag

    def u(a):
        return 0.5 + np.sqrt(0.25 + a * sr - a * a * si * si) + 1j * a * si

    # radius: 0.8 of the distance to the nearest branch point of the radicand; aliasing
    # decays like 0.8^m and roundoff is amplified only by 1.25^k
    roots = np.roots([-si * si, sr, 0.25]) if si else np.array([-0.25 / sr]) if sr else np.array([np.inf])
    r = 0.8 * np.min(np.abs(roots))
    r = min(r, 1.0) if np.isfinite(r) else 1.0
    m = 1024
    th = 2 * np.pi * np.arange(m) / m
    vals = u(r * np.exp(1j * th))
    c = np.fft.fft(vals) / m
    return c[:n] / r ** np.arange(n)


def finite_difference_dvdq(model, bus_id: int, delta: float, newton_solve) -> float:
    """``(|V(Q+delta)| - |V(Q)|) / delta`` from two power-flow solves."""
    import dataclasses

    k = model.index_of(bus_id)
    base = newton_solve(model)
    buses = list(model.buses)
    b = buses[k]
    buses[k] = dataclasses.replace(b, q_inject=b.q_inject + delta / model.scale)
    bumped = newton_solve(model.with_buses(buses), v0=base.v)
    assert base.converged and bumped.converged
    return (abs(bumped.v[k]) - abs(base.v[k])) / delta
