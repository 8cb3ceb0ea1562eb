"""Simulate inspection cycles and compare estimates with the closed forms."""
from oversight import equilibrium_solver as es
from oversight import simulator as sim
from oversight.model_core import validate_params

P0 = validate_params(H=1, L=1, c=0.05, lam=0.5, r=0.1, u=1, k=0.1)

for name, sol in es.solve_all(P0).items():
    est = sim.estimate_values(sol, sim.SimConfig(n_paths=20000, seed=1))
    print(name)
    for key in ("V1", "V0", "U11", "U00"):
        e, ref = getattr(est, key), getattr(sol.bv, key)
        print(f"  {key:>3}: simulated {e.mean:9.5f} +- {e.se:.5f}   closed form {ref:9.5f}")
    res = sim.simulate(sol, sim.SimConfig(n_paths=2000, seed=1, record_paths=True))
    st = sim.cycle_statistics(res, sol)
    gap = st["inter_inspection_time"]
    print(f"  mean time between inspections {gap['mean']:.2f}, pass rate {st['pass_fraction']['mean']:.3f}")
    dwell = st["mean_time_in_regions"]
    print("  mean time per path in " + ", ".join(f"{k} {v:.2f}" for k, v in dwell.items()))

rec = sim.simulate_path(es.solve_recovery(P0), seed=7, path_id=0, horizon=30)
print("\nfirst events of one recovery path:")
for e in rec.events[:8]:
    print(f"  t={e.t:7.3f} {e.kind:<10} p {e.p_before:.3f} -> {e.p_after:.3f}  quality before {e.theta}")
