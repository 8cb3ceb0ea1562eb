import math

import numpy as np
import pytest
from scipy import stats

from oversight import equilibrium_solver as es
from oversight import simulator as sim


def test_uniforms_look_uniform():
    keys = sim.path_keys(42, np.arange(2000))
    u = sim.uniforms(keys, np.arange(2000, dtype=np.uint64), 4).ravel()
    assert u.min() >= 0.0 and u.max() < 1.0
    assert stats.kstest(u, "uniform").pvalue > 0.01
    # neighbouring draws are uncorrelated
    assert abs(np.corrcoef(u[:-1], u[1:])[0, 1]) < 0.02


def test_streams_depend_only_on_path_id():
    a = sim.uniforms(sim.path_keys(7, [5]), [3], 4)
    b = sim.uniforms(sim.path_keys(7, [1, 2, 5])[2:], [3], 4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, sim.uniforms(sim.path_keys(8, [5]), [3], 4))


def test_config_validation():
    with pytest.raises(ValueError):
        sim.SimConfig(n_paths=0)
    with pytest.raises(ValueError):
        sim.SimConfig(horizon=-1.0)
    with pytest.raises(ValueError):
        sim.SimConfig(truncation_policy="sometimes")
    with pytest.raises(ValueError):
        sim.SimConfig(seed=-1)


def test_reproducible_across_chunks_and_workers(p0_solutions):
    sol = p0_solutions["Recovery"]
    a = sim.simulate(sol, sim.SimConfig(n_paths=1500, seed=5, record_paths=True, chunk_size=1500))
    b = sim.simulate(sol, sim.SimConfig(n_paths=1500, seed=5, record_paths=True, chunk_size=400, workers=2))
    assert np.array_equal(a.agent, b.agent) and np.array_equal(a.principal, b.principal)
    assert all(np.array_equal(a.events[k], b.events[k]) for k in a.events)


def test_single_path_matches_batch(p0_solutions):
    sol = p0_solutions["Disclosure"]
    batch = sim.simulate(sol, sim.SimConfig(n_paths=10, seed=3, record_paths=True))
    rec = sim.simulate_path(sol, seed=3, path_id=7)
    assert rec.events == batch.records[7].events
    assert rec.agent_payoff == batch.records[7].agent_payoff


@pytest.mark.parametrize("name", ["Breakdown", "Recovery", "Disclosure"])
def test_event_log_invariants_and_replay(p0_solutions, name):
    sol = p0_solutions[name]
    for pid in range(6):
        for start in ((1.0, 1), (0.0, 0)):
            rec = sim.simulate_path(sol, seed=11, path_id=pid, p0=start[0], theta0=start[1])
            times = [e.t for e in rec.events]
            assert times == sorted(times)
            for e in rec.events:
                if e.kind == "inspection":
                    assert e.p_after == e.theta
            assert math.isfinite(rec.agent_payoff) and math.isfinite(rec.principal_payoff)
            agent, principal = sim.replay_payoffs(rec, sol)
            assert agent == pytest.approx(rec.agent_payoff, abs=1e-9)
            assert principal == pytest.approx(rec.principal_payoff, abs=1e-9)


def test_breakdown_failure_is_absorbing(p0_solutions):
    sol = p0_solutions["Breakdown"]
    res = sim.simulate(sol, sim.SimConfig(n_paths=300, seed=2, record_paths=True))
    for rec in res.records:
        kinds = [e.kind for e in rec.events]
        if "absorb" in kinds:
            i = kinds.index("absorb")
            assert i == len(kinds) - 1
            assert rec.events[i - 1].kind == "inspection" and rec.events[i - 1].p_after == 0.0
            assert rec.tail == (0.0, 0.0)


def test_periodic_cycle_is_deterministic(P0):
    sol = es.solve_periodic(P0)
    res = sim.simulate(sol, sim.SimConfig(n_paths=400, seed=1, record_paths=True))
    stats_ = sim.cycle_statistics(res, sol)
    expected = math.log(1.0 / sol.cutoffs.x_bar) / P0.lam
    assert stats_["inter_inspection_time"]["mean"] == pytest.approx(expected, abs=1e-12)
    assert stats_["blind_trust_dwell"]["spread"] < 1e-12


def test_no_inspection_agent_value_exact(P0):
    sol = es.solve_no_inspection(P0)
    est = sim.estimate_values(sol, sim.SimConfig(n_paths=200, seed=4))
    assert est.U11.mean == pytest.approx(P0.u / P0.r * (1 - P0.p_dagger ** P0.rho), abs=1e-12)
    assert est.V1.mean == pytest.approx(sol.bv.V1, abs=1e-12)


def test_breakdown_agent_gap_matches_fixed_point(p0_solutions, P0):
    sol = p0_solutions["Breakdown"]
    est = sim.estimate_values(sol, sim.SimConfig(n_paths=20000, seed=9))
    target = (P0.r + P0.lam) * (P0.c / P0.lam) / sol.sigma_star + P0.c / P0.lam
    se = math.hypot(est.U11.se, est.U00.se)
    assert abs(est.U11.mean - est.U00.mean - target) < 3 * se


def test_mixing_sojourns_exponential(p0_solutions):
    sol = p0_solutions["Recovery"]
    s = sol.sigma_star
    res = sim.simulate(sol, sim.SimConfig(n_paths=5000, seed=21, record_paths=True, horizon=21 / s),
                       p0=sol.cutoffs.x_bar, theta0="bernoulli")
    d = sim.mixing_sojourns(res, sol)
    assert d.size > 5000
    assert stats.kstest(d, "expon", args=(0, 1 / s)).pvalue > 0.01


def test_recovery_inspection_failure_rate(p0_solutions):
    sol = p0_solutions["Recovery"]
    res = sim.simulate(sol, sim.SimConfig(n_paths=3000, seed=13, record_paths=True))
    st = sim.cycle_statistics(res, sol)["recovery_inspection_failure"]
    assert abs(st["mean"] - (1 - sol.cutoffs.x_low)) < 3 * st["se"]


def test_disclosure_wait_at_zero(p0_solutions, P0):
    sol = p0_solutions["Disclosure"]
    res = sim.simulate(sol, sim.SimConfig(n_paths=3000, seed=13, record_paths=True))
    st = sim.cycle_statistics(res, sol)
    wait = st["wait_at_zero_until_report"]
    assert abs(wait["mean"] - sol.cutoffs.x_zero / P0.lam) < 3 * wait["se"]
    false = st["false_report_fraction"]
    assert abs(false["mean"] - (1 - sol.cutoffs.x_zero)) < 3 * false["se"]


def test_cycle_statistics_accepts_records(p0_solutions):
    sol = p0_solutions["Recovery"]
    res = sim.simulate(sol, sim.SimConfig(n_paths=50, seed=13, record_paths=True))
    a = sim.cycle_statistics(res.records, sol)
    b = sim.cycle_statistics(res, sol)
    assert a["inspections"] == b["inspections"]
    assert a["pass_fraction"] == b["pass_fraction"]
    with pytest.raises(ValueError):
        sim.cycle_statistics([], sol)


@pytest.mark.parametrize("name", ["Breakdown", "Disclosure"])
def test_belief_is_consistent_between_inspections(p0_solutions, name):
    sol = p0_solutions[name]
    x_bar = sol.cutoffs.x_bar
    res = sim.simulate(sol, sim.SimConfig(n_paths=20000, seed=17, record_paths=True, horizon=4.0),
                       p0=x_bar, theta0="bernoulli")
    for t in (0.5, 2.0, 4.0):
        thetas, beliefs = [], []
        for rec in res.records:
            if any(e.kind in ("inspection", "report") and e.t <= t for e in rec.events):
                continue
            p, th = sim.state_at(rec, sol, t)
            thetas.append(th)
            beliefs.append(p)
        thetas = np.array(thetas, dtype=float)
        assert np.ptp(beliefs) < 1e-12
        se = thetas.std(ddof=1) / math.sqrt(thetas.size)
        assert abs(thetas.mean() - beliefs[0]) < 3 * se


def test_standard_errors_shrink_like_root_n(p0_solutions):
    sol = p0_solutions["Recovery"]
    big = sim.estimate_values(sol, sim.SimConfig(n_paths=16000, seed=23))
    small = sim.estimate_values(sol, sim.SimConfig(n_paths=4000, seed=23))
    assert small.U11.se / big.U11.se == pytest.approx(2.0, rel=0.15)
    assert small.V1.se / big.V1.se == pytest.approx(2.0, rel=0.15)


def test_hard_cut_needs_long_horizon(p0_solutions):
    sol = p0_solutions["Recovery"]
    with pytest.raises(sim.HorizonTooShort):
        sim.simulate(sol, sim.SimConfig(n_paths=20, seed=1, horizon=5.0, truncation_policy="hard_cut"))
    with pytest.raises(sim.HorizonTooShort):
        sim.simulate_path(sol, seed=1, horizon=5.0, truncation_policy="hard_cut")
    # long enough that the discounted tail is below the bound
    res = sim.simulate(sol, sim.SimConfig(n_paths=20, seed=1, truncation_policy="hard_cut"))
    assert np.all(res.tail_agent == 0.0)
