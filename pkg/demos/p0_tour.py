"""Solve every class at the reference parameters and print cutoffs and values."""
import numpy as np

from oversight import equilibrium_solver as es
from oversight.model_core import validate_params

P0 = validate_params(H=1, L=1, c=0.05, lam=0.5, r=0.1, u=1, k=0.1)

periodic = es.solve_periodic(P0)
print(f"periodic cutoffs: x_low={periodic.cutoffs.x_low:.4f} x_bar={periodic.cutoffs.x_bar:.4f}")
print(f"  agent would shirk only if u <= {periodic.diagnostics['u_bar_P']:.4f}; here u = {P0.u}, "
      f"so periodic inspection is not an equilibrium")

for name, sol in es.solve_all(P0).items():
    c = sol.cutoffs
    print(f"\n{name}: sigma*={sol.sigma_star:.5f}")
    print("  " + "  ".join(f"{k}={v:.4f}" for k, v in vars(c).items() if v is not None))
    print(f"  V(1)={sol.bv.V1:.5f} V(0)={sol.bv.V0:.5f} U(1,1)={sol.bv.U11:.4f} U(0,0)={sol.bv.U00:.4f}")

p = np.linspace(0, 1, 11)
print("\n   p  " + "".join(f"{n:>12}" for n in ("Breakdown", "Recovery", "Disclosure")))
sols = es.solve_all(P0)
for x in p:
    print(f"{x:5.2f} " + "".join(f"{float(sols[n].value(x)):12.5f}" for n in ("Breakdown", "Recovery", "Disclosure")))

th = es.thresholds(P0)
print(f"\nthresholds at k={P0.k}: u_bar_P={th.u_bar_P:.5f} u_low_B={th.u_low_B:.5f} u_low_R={th.u_low_R:.5f}")
