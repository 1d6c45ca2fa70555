"""The POD tail identity on random snapshots.

The mean squared projection error of n snapshots onto the rank-l POD
basis equals the sum of the discarded correlation eigenvalues.  We check
it for every l and show how the energy ratio picks a rank.
"""

import numpy as np

from parawave.assembly import h1_gram
from parawave.grid import build_grids
from parawave.pod import correlation_matrix, pod, pod_basis, projection_error

rng = np.random.default_rng(0)
grid = build_grids(4, 4)
X = h1_gram(grid)
# snapshots with a decaying spectrum
n = 12
Y = rng.standard_normal((grid.n_interior, n)) * 0.6 ** np.arange(n)

K = correlation_matrix(Y, X)
for ell in range(1, n + 1):
    r = pod_basis(K, Y, rank=ell)
    err = projection_error(Y, r, X)
    print(f"l={ell:2d}  error={err:.6e}  tail={r.tail:.6e}")

auto = pod(Y, X, zeta=1e-3)
print(f"zeta=1e-3 selects rank {auto.rank}")
