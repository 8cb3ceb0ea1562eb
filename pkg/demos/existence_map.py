"""Which classes exist across inspection cost k and approval utility u."""
import numpy as np

from oversight import equilibrium_solver as es
from oversight.model_core import validate_params

base = validate_params(H=1, L=1, c=0.05, lam=0.2, r=0.5, u=1, k=0.1)
ks, us = np.geomspace(0.005, 0.4, 12), np.geomspace(0.08, 2.0, 16)
cells = {(c.k, c.u): c for c in es.existence_map(base, ks, us)}

print("letters: P periodic, B breakdown, R recovery, D disclosure; rows k, columns u")
print("        " + " ".join(f"{u:5.2f}" for u in us))
for k in ks:
    row = []
    for u in us:
        c = cells[(float(k), float(u))]
        row.append("".join(ch if ok else "." for ch, ok in zip(
            "PBRD", (c.periodic_exists, c.breakdown_exists, c.recovery_exists, c.disclosure_exists))))
    print(f"{k:7.4f} " + " ".join(f"{r:>5}" for r in row))

diag = es.map_diagnostics(list(cells.values()))
print(f"\n{len(diag['witnesses'])} pairs where breakdown exists at the larger k only, "
      f"e.g. {diag['witnesses'][:1]}")
