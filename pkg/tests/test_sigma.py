from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helmgrid.hem import AllScaling, solve_hem
from helmgrid.modal import bisect_collapse, newton_solve
from helmgrid.netmodel import Branch, Bus, BusKind, NetworkModel, scale_injections
from helmgrid.series import PowerSeries
from helmgrid.sigma import (
    SigmaIndex,
    TwoBusEquivalent,
    estimate_snbp,
    min_condition,
    polezero_estimate,
    scan_point,
    sigma_condition,
    sigma_from_voltage,
    sigma_indices,
    sigma_of,
    sigma_series,
    two_bus_roots,
)

finite = st.floats(-3, 3, allow_nan=False)


# closed forms ------------------------------------------------------------

def test_two_bus_equivalent_sigma():
    eq = TwoBusEquivalent(0.01 + 0.1j, -0.5 - 0.2j, 1.05 * np.exp(0.3j))
    assert eq.sigma == (0.01 + 0.1j) * np.conj(-0.5 - 0.2j) / 1.05**2
    assert sigma_of(0.25j, -1.0) == -0.25j


def test_two_bus_roots_examples():
    hi, lo, ok = two_bus_roots(0)
    assert (hi, lo, ok) == (1, 0, True)
    hi, lo, ok = two_bus_roots(-0.25 + 0j)
    assert hi == lo == 0.5 and ok
    hi, _, ok = two_bus_roots(-0.25j)
    assert ok and abs(hi - (0.5 + np.sqrt(0.1875) - 0.25j)) < 1e-15
    assert abs(hi - (0.93301 - 0.25j)) < 1e-5


def test_two_bus_roots_past_nose_flagged():
    hi, lo, ok = two_bus_roots(-0.3 + 0j)
    assert not ok
    assert hi == np.conj(lo) and hi.real == 0.5


def test_sigma_condition_examples():
    assert sigma_condition(0) == 0.25
    assert sigma_condition(-0.25) == 0.0
    assert abs(sigma_condition(-0.16 + 0.3j)) < 1e-16


def test_sigma_from_voltage_examples():
    assert sigma_from_voltage(1.0) == 0
    assert abs(sigma_from_voltage(0.5 + 0.3j) - (-0.16 + 0.3j)) < 1e-16
    assert sigma_from_voltage(0.5) == -0.25
    with pytest.raises(ZeroDivisionError):
        sigma_from_voltage(0j)


def test_sigma_index_fields():
    s = SigmaIndex.from_voltage(7, 0.9 - 0.1j)
    assert s.condition == 0.25 + s.sigma_r - s.sigma_i**2
    assert abs(s.condition - 0.4**2) < 1e-12


@settings(max_examples=300, deadline=None)
@given(finite, finite)
def test_sigma_condition_identity_random(ur, ui):
    u = complex(ur, ui)
    if u == 0:
        return
    assert abs(sigma_condition(sigma_from_voltage(u)) - (ur - 0.5) ** 2) <= 1e-12 * max(1.0, abs(u) ** 2)


@settings(max_examples=300, deadline=None)
@given(finite, finite)
def test_root_consistency(sr, si):
    sigma = complex(sr, si)
    hi, lo, ok = two_bus_roots(sigma)
    if not ok:
        return
    for u in (hi, lo):
        if u != 0:
            assert abs(sigma_from_voltage(u) - sigma) <= 1e-12 * max(1.0, abs(sigma))


# sigma series ------------------------------------------------------------

def test_sigma_series_of_constant_one_is_zero():
    s = sigma_series(PowerSeries(np.r_[1.0, np.zeros(9)]))
    assert np.all(s.coeffs == 0) and s.n_terms == 9


def test_sigma_series_two_bus(twobus):
    sol = solve_hem(twobus, n_terms=40)
    idx = sigma_indices(twobus, 1.0, 40)
    assert len(idx) == 1
    assert abs(idx[0].sigma - (-0.25j)) <= 1e-10
    s = sigma_series(sol.normalized_series(1))
    assert s.coeffs[0] == -0.25j  # sigma(0) = z S* / |V0|^2 exactly


def test_sigma_series_dimension_mismatch():
    with pytest.raises(ValueError):
        sigma_series(PowerSeries([1, 2, 3]), PowerSeries([1, 2]))


@pytest.mark.parametrize("lam", [1.0, 2.0])
def test_series_route_matches_voltage_route(case14, lam):
    sol = solve_hem(case14, AllScaling(lam), n_terms=50)
    u = sol.evaluate(1.0) / sol.v_slack
    for s in sigma_indices(case14, lam, 50):
        k = case14.index_of(s.bus)
        assert abs(s.sigma - sigma_from_voltage(u[k])) <= 1e-8


# sigma_indices -----------------------------------------------------------

def shunt_free_star(n_leaf: int = 4, load: complex = 0.0) -> NetworkModel:
    buses = [Bus(1, BusKind.SLACK)] + [Bus(k, BusKind.PQ, load.real, load.imag) for k in range(2, n_leaf + 2)]
    branches = [Branch(1, k, 0.02 + 0.1j) for k in range(2, n_leaf + 2)]
    return NetworkModel(buses, branches)


def test_zero_load_sigma_indices():
    for s in sigma_indices(shunt_free_star(), 1.0, 10):
        assert s.sigma == 0 and s.condition == 0.25
    for s in sigma_indices(shunt_free_star(load=-0.5 - 0.1j), 0.0, 10):
        assert s.sigma == 0 and s.condition == 0.25


def test_min_condition_treats_nan_as_minus_inf():
    idx = [SigmaIndex(1, 0.1 + 0j, 1), SigmaIndex(2, complex(np.nan, np.nan), 1)]
    assert min_condition(idx) == (-np.inf, 2)


def test_min_condition_smaller_at_1_88_than_at_3_1(case118):
    lo, _ = min_condition(sigma_indices(case118, 1.88))
    hi, _ = min_condition(sigma_indices(case118, 3.1))
    assert lo < hi


def test_dip_then_rise_on_some_bus(case118):
    lams = np.round(np.arange(1.2, 3.1001, 0.1), 10)
    traces = np.array([[s.condition for s in sigma_indices(case118, lam)] for lam in lams])
    interior = traces[1:-1].min(axis=0)
    dips = (interior < traces[0]) & (interior < traces[-1])
    assert dips.any()


def test_solved_states_never_give_negative_conditions(case14, case118):
    for m in (case14, case118):
        for lam in (1.0, 2.0, 3.0):
            st_ = newton_solve(scale_injections(m, lam))
            assert st_.converged
            u = np.delete(st_.v / m.v_slack, m.slack)
            cond = sigma_condition(sigma_from_voltage(u))
            assert np.all(cond >= 0)
            assert np.max(np.abs(cond - (u.real - 0.5) ** 2)) <= 1e-12


# estimate_snbp -----------------------------------------------------------

def test_two_bus_snbp(twobus):
    est = estimate_snbp(twobus)
    assert est.detected and est.method == "sigma" and est.detecting_bus == 2
    assert 2.0 <= est.lambda_star <= 2.02
    assert 2.0 <= est.polezero.lambda_star <= 2.02


def test_case118_snbp(case118):
    est = estimate_snbp(case118, threads=4)
    assert 3.18 <= est.lambda_star <= 3.25
    assert 3.18 <= est.polezero.lambda_star <= 3.25


def test_case14_snbp_within_two_percent_above_oracle(case14):
    oracle = bisect_collapse(case14, 1.0, 5.0)
    est = estimate_snbp(case14, ceiling=5.0, threads=4)
    assert oracle <= est.lambda_star <= 1.02 * oracle
    assert oracle <= est.polezero.lambda_star <= 1.02 * oracle


def test_not_detected_below_ceiling_still_reports_polezero(twobus):
    est = estimate_snbp(twobus, ceiling=1.8)
    assert not est.detected and est.lambda_star is None
    assert est.polezero is not None and est.polezero.method == "polezero"


def test_scan_invariant_over_confirmed_points(twobus, case118):
    for m in (twobus, case118):
        est = estimate_snbp(m, with_polezero=False)
        confirmed = [p.lam for p in est.scan_trace if p.confirmed()]
        assert est.lambda_star >= max(confirmed)


def test_scan_deterministic_across_threads(twobus):
    a = estimate_snbp(twobus, threads=1, with_polezero=False)
    b = estimate_snbp(twobus, threads=4, with_polezero=False)
    assert a.lambda_star == b.lambda_star
    assert [p.lam for p in a.scan_trace] == [p.lam for p in b.scan_trace]


def test_scan_point_fields(twobus):
    ok = scan_point(twobus, 1.5)
    assert ok.confirmed() and not ok.negative()
    assert abs(ok.min_condition - (0.25 - (0.25 * 1.5) ** 2)) < 1e-10
    past = scan_point(twobus, 2.5)
    assert past.negative() and past.flagged()[0][1] == 2


def test_polezero_direct(twobus):
    est = polezero_estimate(twobus, ceiling=4.0)
    assert est.method == "polezero" and 2.0 <= est.lambda_star <= 2.02
