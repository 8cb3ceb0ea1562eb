"""Grid oracle against the closed forms, with halving of the time step and spacing."""
from oversight import dp_oracle as dp
from oversight import equilibrium_solver as es
from oversight.model_core import validate_params

P0 = validate_params(H=1, L=1, c=0.05, lam=0.5, r=0.1, u=1, k=0.1)
levels = [(501, 4e-3), (1001, 2e-3), (2001, 1e-3)]

for name, sol in es.solve_all(P0).items():
    print(name)
    prev = None
    for n, dt in levels:
        cmp = dp.compare_with_solution(sol, n, dt)
        g = cmp.gaps
        ratio = "" if prev is None else f"  ratio {prev / cmp.err:.2f}"
        print(f"  n={n:5d} dt={dt:.0e}  err V {cmp.err_V:.2e}  err U {cmp.err_U:.2e}  "
              f"agent gap {g.agent_gap:.1e}  principal gap {g.principal_gap:.1e}  bound {g.bound:.1e}{ratio}")
        prev = cmp.err

sol = es.solve_breakdown(P0)
grid = dp.grid_for_solution(sol, 2001, 1e-3)
g = dp.deviation_gap(grid, dp.breakdown_without_inspection(sol, grid))
print(f"\nbreakdown effort without inspections: agent gap {g.agent_gap:.3f}, "
      f"principal gap {g.principal_gap:.3f}, bound {g.bound:.4f}")
