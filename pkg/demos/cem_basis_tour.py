"""Look at one layer's auxiliary and CEM basis functions.

For a high-contrast layer we print the smallest local eigenvalues per
coarse element, then check two properties of the localized CEM functions:
their energy decays away from the owning element, and the patch equations
are satisfied to rounding.
"""

import numpy as np

from parawave.assembly import assemble_q1
from parawave.cem import cem_system_residual, layer_cem
from parawave.grid import build_grids
from parawave.media import experiment1_pattern

grid = build_grids(6, 8)
c = np.where(experiment1_pattern(grid) == 1, 20.0, 1.0)
ops, basis, results = layer_cem(grid, c, count=2, m=2)

print("element  sigma_1  sigma_2  next")
for r in results[:6]:
    print(f"{r.element:7d}  {r.eigenvalues[0]:7.3f}  {r.eigenvalues[1]:7.3f}  {r.next_eigenvalue:6.3f}")
lam = min(r.next_eigenvalue for r in results)
print(f"Lambda (smallest discarded eigenvalue) = {lam:.3f}")

# energy of the first function of the centre element, by ring distance
centre = grid.n_coarse * (grid.n_coarse // 2) + grid.n_coarse // 2
col = np.flatnonzero(basis.meta["element"] == centre)[0]
psi = grid.restrict(basis.vectors[:, col])
ci, cj = grid.element_ij(centre)
cell_energy = np.zeros(grid.n_elements)
for e in range(grid.n_elements):
    A_e = assemble_q1(grid, c, "stiffness", cells=grid.element_cells(e))
    A_e = A_e[grid.interior_dofs][:, grid.interior_dofs]
    cell_energy[e] = psi @ (A_e @ psi)
rings = {}
for e in range(grid.n_elements):
    ei, ej = grid.element_ij(e)
    rings.setdefault(max(abs(ei - ci), abs(ej - cj)), []).append(cell_energy[e])
for d, vals in sorted(rings.items()):
    print(f"ring {d}: energy share {sum(vals) / cell_energy.sum():.2e}")

res = max(cem_system_residual(grid, ops, results, basis, i, 2) for i in range(grid.n_elements))
print(f"max patch residual = {res:.1e}")
