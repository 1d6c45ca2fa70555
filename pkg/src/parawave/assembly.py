"""Fine-grid Q1 bilinear forms, MsFEM partition of unity and the spectral weight.

All operators act on interior fine dofs (Dirichlet nodes removed); basis
vectors are stored on the full fine node set.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .grid import GridHierarchy

# Q1 element matrices on a square, local order (0,0),(1,0),(0,1),(1,1).
# The stiffness is size independent in 2D; the mass scales with side**2.
Q1_STIFFNESS = np.array(
    [[4.0, -1.0, -1.0, -2.0], [-1.0, 4.0, -2.0, -1.0], [-1.0, -2.0, 4.0, -1.0], [-2.0, -1.0, -1.0, 4.0]]
) / 6.0
Q1_MASS = np.array(
    [[4.0, 2.0, 2.0, 1.0], [2.0, 4.0, 1.0, 2.0], [2.0, 1.0, 4.0, 2.0], [1.0, 2.0, 2.0, 4.0]]
) / 36.0

TAGS = ("msfem", "auxiliary", "cem", "pod")


@dataclass
class BasisSet:
    """Column-stacked fine-node vectors with per-vector metadata.

    ``meta`` maps names (``layer``, ``element``, ``eigenvalue``, ...) to arrays
    with one entry per vector.  ``info`` carries set-level scalars such as the
    oversampling depth or the POD spectrum.
    """

    vectors: np.ndarray
    tag: str
    meta: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ValueError(f"unknown basis tag {self.tag!r}")
        self.vectors = np.asarray(self.vectors, dtype=float)
        if self.vectors.ndim != 2:
            raise ValueError("vectors must be a (dofs, count) array")
        self.meta = {k: np.asarray(v) for k, v in self.meta.items()}
        for name, values in self.meta.items():
            if values.shape[0] != self.vectors.shape[1]:
                raise ValueError(f"metadata {name!r} has {values.shape[0]} entries for {len(self)} vectors")

    def __len__(self):
        return self.vectors.shape[1]

    @property
    def n_dofs(self) -> int:
        return self.vectors.shape[0]


@dataclass
class LayerOperators:
    """Assembled forms of one layer on the interior fine dofs."""

    A: sp.csr_matrix
    Mc: sp.csr_matrix
    M: sp.csr_matrix
    coefficients: np.ndarray
    k: int = 0
    S: sp.csr_matrix | None = None
    kappa: np.ndarray | None = None


def _check_coefficients(grid, coefficients):
    coefficients = np.asarray(coefficients, dtype=float).ravel()
    if coefficients.size != grid.n_cells:
        raise ValueError(f"{coefficients.size} coefficients for {grid.n_cells} cells")
    if not np.all(coefficients > 0):
        raise ValueError("coefficients must be strictly positive")
    return coefficients


def assemble_q1(grid: GridHierarchy, weights, kind: str, cells=None) -> sp.csr_matrix:
    """Weighted Q1 stiffness (``kind='stiffness'``) or mass over all fine nodes.

    ``weights`` holds one value per fine cell; only ``cells`` contribute
    when given.
    """
    weights = np.asarray(weights, dtype=float).ravel()
    if kind == "stiffness":
        local = Q1_STIFFNESS
    elif kind == "mass":
        local = Q1_MASS * grid.side**2
    else:
        raise ValueError(f"unknown form {kind!r}")
    if cells is None:
        cells = np.arange(grid.n_cells)
    dofs = grid.cell_dofs[cells]
    rows = np.repeat(dofs, 4, axis=1).ravel()
    cols = np.tile(dofs, (1, 4)).ravel()
    data = (weights[cells][:, None, None] * local[None]).ravel()
    n = grid.n_nodes
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def dirichlet_restrict(grid: GridHierarchy, matrix) -> sp.csr_matrix:
    idx = grid.interior_dofs
    return sp.csr_matrix(matrix[idx][:, idx])


def assemble_layer(grid: GridHierarchy, coefficients, k: int = 0) -> LayerOperators:
    """A_k (weight c), Mc_k (weight 1/c) and M on the interior dofs."""
    c = _check_coefficients(grid, coefficients)
    return LayerOperators(
        A=dirichlet_restrict(grid, assemble_q1(grid, c, "stiffness")),
        Mc=dirichlet_restrict(grid, assemble_q1(grid, 1.0 / c, "mass")),
        M=mass_matrix(grid),
        coefficients=c,
        k=k,
    )


def mass_matrix(grid: GridHierarchy) -> sp.csr_matrix:
    return dirichlet_restrict(grid, assemble_q1(grid, np.ones(grid.n_cells), "mass"))


def h1_gram(grid: GridHierarchy) -> sp.csr_matrix:
    """Gram matrix of (u, v)_{H1} = (grad u, grad v) + (u, v) on interior dofs."""
    ones = np.ones(grid.n_cells)
    full = assemble_q1(grid, ones, "stiffness") + assemble_q1(grid, ones, "mass")
    return dirichlet_restrict(grid, full)


def cell_gradients(grid: GridHierarchy, vectors) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of fine-node vectors at cell centres, shape (n_cells, count)."""
    v = np.asarray(vectors, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    d = grid.cell_dofs
    u00, u10, u01, u11 = (v[d[:, a]] for a in range(4))
    s = grid.side
    gx = ((u10 - u00) + (u11 - u01)) / (2.0 * s)
    gy = ((u01 - u00) + (u11 - u10)) / (2.0 * s)
    return gx, gy


def coarse_hat(grid: GridHierarchy, j: int, points) -> np.ndarray:
    """Bilinear coarse hat of coarse node ``j`` evaluated at ``points``."""
    jx, jy = grid.coarse_node_ij[j]
    L = grid.coarse_side
    px, py = np.asarray(points, dtype=float).T
    wx = np.clip(1.0 - np.abs(px / L - jx), 0.0, None)
    wy = np.clip(1.0 - np.abs(py / L - jy), 0.0, None)
    return wx * wy


def msfem_partition(grid: GridHierarchy, coefficients) -> BasisSet:
    """c-harmonic extensions of the bilinear hats, one per coarse node.

    Every coarse node (boundary ones included) gets a function, so the set
    sums to one everywhere.  Column ``j`` belongs to coarse node ``j``; the
    ``interior`` metadata flags the nodes x_1..x_{N_c}.
    """
    c = _check_coefficients(grid, coefficients)
    chi = np.zeros((grid.n_nodes, grid.n_coarse_nodes))
    nc = grid.n_coarse
    for e in range(grid.n_elements):
        ex, ey = grid.element_ij(e)
        nodes = grid.element_nodes(e)
        inner = grid.box_nodes(ex, ex, ey, ey, interior=True)
        on_edge = np.setdiff1d(nodes, inner)
        A = assemble_q1(grid, c, "stiffness", cells=grid.element_cells(e))
        A_ii = A[inner][:, inner].toarray()
        A_ib = A[inner][:, on_edge]
        try:
            factor = la.cho_factor(A_ii)
        except la.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"singular local MsFEM system on element {e}") from exc
        corners = [ey * (nc + 1) + ex, ey * (nc + 1) + ex + 1, (ey + 1) * (nc + 1) + ex, (ey + 1) * (nc + 1) + ex + 1]
        g = np.column_stack([coarse_hat(grid, j, grid.coords[on_edge]) for j in corners])
        interior_vals = la.cho_solve(factor, -(A_ib @ g))
        for col, j in enumerate(corners):
            chi[on_edge, j] = g[:, col]
            chi[inner, j] = interior_vals[:, col]
    interior = np.zeros(grid.n_coarse_nodes, dtype=bool)
    interior[grid.coarse_interior_nodes] = True
    return BasisSet(chi, "msfem", meta={"node": np.arange(grid.n_coarse_nodes), "interior": interior})


def kappa_tilde(grid: GridHierarchy, coefficients, chi: BasisSet, include_boundary_nodes: bool = False):
    """Per-cell weight sum_j c |grad chi_j|^2 and the interior-dof mass it weights.

    The sum runs over interior coarse nodes unless ``include_boundary_nodes``.
    """
    c = _check_coefficients(grid, coefficients)
    if chi.tag != "msfem" or len(chi) != grid.n_coarse_nodes:
        raise ValueError("need the complete MsFEM partition (one function per coarse node)")
    cols = np.arange(len(chi)) if include_boundary_nodes else np.flatnonzero(chi.meta["interior"])
    gx, gy = cell_gradients(grid, chi.vectors[:, cols])
    kappa = c * np.sum(gx**2 + gy**2, axis=1)
    S = dirichlet_restrict(grid, assemble_q1(grid, kappa, "mass"))
    return kappa, S


def build_layer(grid: GridHierarchy, coefficients, k: int = 0, include_boundary_nodes: bool = False):
    """Assemble every form of a layer, S_k included; also returns the chi set."""
    ops = assemble_layer(grid, coefficients, k)
    chi = msfem_partition(grid, ops.coefficients)
    ops.kappa, ops.S = kappa_tilde(grid, ops.coefficients, chi, include_boundary_nodes)
    return ops, chi


def dump_coo(matrix, path) -> None:
    """Debug dump, one ``row col value`` triple per line."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")


def load_coo(path, shape) -> sp.csr_matrix:
    data = np.loadtxt(path, ndmin=2)
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=shape)
