import math

import numpy as np
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.optimize import minimize_scalar

from oversight import equilibrium_solver as es
from oversight.model_core import ModelError, validate_params


def periodic_policy_value(x, pr):
    """V(1) of 'inspect when the belief decays to x, stop forever after a failure'.

    Built from a quadrature of the flow along the zero-effort path and the
    renewal equation, independently of the solver's closed forms.
    """
    tau = math.log(1.0 / x) / pr.lam
    flow = quad(lambda t: math.exp(-pr.r * t) * (math.exp(-pr.lam * t) * (pr.H + pr.L) - pr.L),
                0.0, tau, epsabs=1e-14, epsrel=1e-14)[0]
    d = math.exp(-pr.r * tau)
    return (flow - d * pr.k) / (1.0 - d * x)


def test_periodic_cutoff_maximises_policy_value(P0):
    sol = es.solve_periodic(P0)
    best = minimize_scalar(lambda x: -periodic_policy_value(x, P0), bounds=(0.5, 0.999),
                           method="bounded", options={"xatol": 1e-10})
    assert sol.cutoffs.x_bar == pytest.approx(best.x, abs=1e-6)
    assert sol.bv.V1 == pytest.approx(periodic_policy_value(sol.cutoffs.x_bar, P0), abs=1e-12)
    assert sol.bv.V1 >= -best.fun - 1e-12


def test_periodic_frozen_values(P0):
    # frozen from the brute-force oracle above
    sol = es.solve_periodic(P0)
    assert sol.cutoffs.x_bar == pytest.approx(0.7373631333939787, abs=1e-9)
    assert sol.cutoffs.x_low == pytest.approx(0.09127169504720149, abs=1e-9)
    assert sol.cutoffs.x_low * sol.bv.V1 == pytest.approx(P0.k, abs=1e-12)


def test_periodic_is_not_an_equilibrium_at_high_u(P0):
    sol = es.solve_periodic(P0)
    assert P0.u > sol.diagnostics["u_bar_P"]
    assert sol.diagnostics["equilibrium"] is False
    assert "Periodic" not in es.solve_all(P0)


def test_periodic_equilibrium_when_effort_is_cheap_to_skip():
    pr = validate_params(H=1, L=1, c=0.05, lam=0.2, r=0.5, u=0.1, k=0.1)
    sol = es.solve_periodic(pr)
    assert pr.u <= sol.diagnostics["u_bar_P"]
    assert sol.diagnostics["equilibrium"]
    assert sol.bv.U11 <= pr.c / pr.lam


def test_classes_at_p0(p0_solutions):
    assert set(p0_solutions) == {"Breakdown", "Recovery", "Disclosure"}


def test_breakdown_direct_conditions(p0_solutions, P0):
    sol = p0_solutions["Breakdown"]
    c, bv = sol.cutoffs, sol.bv
    assert bv.V0 == 0.0
    assert float(es.upper_value(1.0, c.x_bar, bv, P0)) == pytest.approx(bv.V1, abs=1e-12)
    assert c.x_low * bv.V1 == pytest.approx(P0.k, abs=1e-12)


def test_recovery_matches_direct_smooth_pasting(p0_solutions, P0):
    # four conditions in (x_low, x_bar, V0, V1) written straight from the value pieces
    sol = p0_solutions["Recovery"]
    c, bv = sol.cutoffs, sol.bv
    xl, xb, spread = c.x_low, c.x_bar, bv.V1 - bv.V0
    phi_low = float(sol.phi(xl))
    assert bv.V0 == pytest.approx((1.0 - xl) ** P0.rho * phi_low, abs=1e-12)
    assert bv.V1 == pytest.approx(float(es.upper_value(1.0, xb, bv, P0)), abs=1e-12)
    assert P0.rho * phi_low / (1.0 - xl) == pytest.approx(spread, abs=1e-9)
    h = 1e-6
    slope = (es.upper_value(xb + h, xb, bv, P0) - es.upper_value(xb - h, xb, bv, P0)) / (2 * h)
    assert float(slope) == pytest.approx(spread, abs=1e-8)


def test_mixing_region_value_of_quality(p0_solutions, P0):
    for sol in p0_solutions.values():
        c = sol.cutoffs
        lo = c.x_star if sol.cls == "Breakdown" else c.x_zero + 1e-9
        p = np.linspace(lo, c.x_bar, 50)
        gap = sol.agent_value(p, 1) - sol.agent_value(p, 0)
        assert np.allclose(gap, P0.c / P0.lam, atol=1e-12)


def test_agent_values_at_boundaries(p0_solutions):
    for sol in p0_solutions.values():
        assert float(sol.agent_value(1.0, 1)) == pytest.approx(sol.bv.U11, abs=1e-12)
        assert float(sol.agent_value(0.0, 0)) == pytest.approx(sol.bv.U00, abs=1e-12)


def test_sigma_star_identities(p0_solutions, P0):
    for name, sol in p0_solutions.items():
        regime = name.lower()
        h = es.h_function(sol.sigma_star, sol.cutoffs.x_bar, sol.cutoffs.x_low, regime, P0)
        assert abs(h) < 1e-10
        assert abs(sol.incentive_residual()) < 1e-9
        gap = sol.bv.U11 - sol.bv.U00
        assert gap == pytest.approx((P0.r + P0.lam) * (P0.c / P0.lam) / sol.sigma_star + P0.c / P0.lam,
                                    rel=1e-10)


def test_sigma_star_is_smallest_root(p0_solutions, P0):
    sol = p0_solutions["Breakdown"]
    s = np.geomspace(1e-8, sol.sigma_star * (1 - 1e-6), 400)
    h = es.h_function(s, sol.cutoffs.x_bar, sol.cutoffs.x_low, "breakdown", P0)
    assert np.all(np.asarray(h) < 0)


def test_structural_invariants_battery(battery):
    for pr in battery:
        for sol in es.solve_all(pr).values():
            inv = es.structural_invariants(sol)
            assert inv["cutoff_ordering"]
            assert inv["value_match_x_bar"] < 1e-10
            assert inv["smooth_pasting_x_bar"] < 1e-6
            assert inv["eta_bar_vs_linear_effort"] < 1e-8
            if sol.cls == "Recovery":
                assert inv["smooth_pasting_x_low"] < 1e-6
                assert inv["value_match_x_low"] < 1e-10
            if sol.cls in ("Recovery", "Disclosure"):
                assert inv["x_zero_formula"] < 1e-12
            if sol.cls == "Disclosure":
                assert inv["value_jump_formula_error"] < 1e-12
                assert inv["value_jump_x_low"] > 0
            if sol.cls == "Breakdown":
                assert inv["slope_jump_x_low"] > 0


def test_disclosure_reports_move_belief_to_x_zero(p0_solutions):
    rep = p0_solutions["Disclosure"].reporting
    p = np.linspace(1e-4, rep.x_low - 1e-4, 30)
    q = rep.report_prob(p, 0)
    assert np.all((q >= 0) & (q <= 1))
    posterior = p / (p + (1 - p) * q)
    assert np.allclose(posterior, rep.x_zero, atol=1e-12)
    # at zero: true reports at lam against false ones
    assert rep.lam / (rep.lam + rep.false_rate) == pytest.approx(rep.x_zero)
    assert rep.total_rate == pytest.approx(rep.lam / rep.x_zero)


def test_value_ordering_p0(p0_solutions):
    p = np.linspace(0.0, 1.0, 1000)
    vb, vr, vd = (p0_solutions[n].value(p) for n in ("Breakdown", "Recovery", "Disclosure"))
    assert np.all(vb <= vr + 1e-9)
    assert np.all(vr <= vd + 1e-9)


def test_evaluate_and_inspection(p0_solutions):
    sol = p0_solutions["Breakdown"]
    c = sol.cutoffs
    assert sol.inspection(0.99).kind == "none"
    assert sol.inspection(0.5 * (c.x_star + c.x_bar)).kind == "hazard"
    assert sol.inspection(0.5 * (c.x_low + c.x_star)).kind == "immediate"
    ev = sol.evaluate(1.0)
    assert ev.alpha == 1 and ev.eta == 0.0 and ev.inspection.kind == "none"


def test_thresholds_p0(P0):
    th = es.thresholds(P0)
    assert th.u_bar_P == pytest.approx(0.051801332536055456, rel=1e-12)
    # the breakdown fixed point appears exactly where periodic play stops
    assert th.u_low_B == pytest.approx(th.u_bar_P, rel=1e-8)
    assert th.u_low_R_r is not None and th.u_low_R_rl is not None
    assert th.u_low_R == max(th.u_low_R_r, th.u_low_R_rl)


def test_thresholds_decrease_in_k(P0):
    a, b = es.thresholds(P0, 0.05), es.thresholds(P0, 0.1)
    assert a.u_bar_P > b.u_bar_P
    assert a.u_low_B > b.u_low_B


def test_existence_map_worker_independent():
    base = validate_params(H=1, L=1, c=0.05, lam=0.2, r=0.5, u=1, k=0.1)
    ks, us = [0.01, 0.1, 0.3], [0.08, 0.3, 1.5]
    one = es.existence_map(base, ks, us, workers=1)
    two = es.existence_map(base, ks, us, workers=2)
    assert [(c.k, c.u, c.breakdown_exists, c.recovery_exists) for c in one] == \
        [(c.k, c.u, c.breakdown_exists, c.recovery_exists) for c in two]
    with pytest.raises(ValueError):
        es.existence_map(base, [0.1, 0.05], us)


def test_map_diagnostics_lists_all_pairs():
    th = es.Thresholds(None, None, None, None)
    cells = [es.ExistenceCell(k, 1.0, False, k > 0.1, False, False, th) for k in (0.05, 0.1, 0.2, 0.3)]
    diag = es.map_diagnostics(cells)
    pairs = {(w["k_prime"], w["k"]) for w in diag["witnesses"]}
    assert pairs == {(0.05, 0.2), (0.05, 0.3), (0.1, 0.2), (0.1, 0.3)}


params_st = st.fixed_dictionaries({
    "H": st.floats(0.5, 2.0), "L": st.floats(0.5, 2.0), "c": st.floats(0.01, 0.1),
    "lam": st.floats(0.1, 1.0), "r": st.floats(0.05, 0.5), "k": st.floats(0.01, 0.2),
    "u_mult": st.floats(1.05, 10.0),
})


def _params(d):
    u = d["c"] * (d["r"] + d["lam"]) / d["r"] * d["u_mult"]
    return validate_params(d["H"], d["L"], d["c"], d["lam"], d["r"], u, d["k"])


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(d=params_st)
def test_periodic_cutoffs_property(d):
    pr = _params(d)
    try:
        sol = es.solve_periodic(pr)
    except ModelError:
        return
    assume(sol.cls == "Periodic")
    assert pr.p_dagger <= sol.cutoffs.x_bar < 1.0
    assert abs(sol.diagnostics["sp_residual"]) < 1e-10
    assert sol.cutoffs.x_low * sol.bv.V1 == pytest.approx(pr.k, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(d=params_st)
def test_solutions_satisfy_invariants_property(d):
    pr = _params(d)
    for sol in es.solve_all(pr).values():
        if sol.cls == "NoInspection":
            continue
        inv = es.structural_invariants(sol)
        assert inv["cutoff_ordering"]
        assert inv["value_match_x_bar"] < 1e-9
        assert inv["smooth_pasting_x_bar"] < 1e-6
        if sol.sigma_star is not None:
            assert inv["incentive_residual"] < 1e-9
            assert inv["eta_bar_vs_linear_effort"] < 1e-8
