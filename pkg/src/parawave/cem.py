"""Auxiliary spectral basis and constraint-energy-minimizing (CEM) basis."""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._parallel import pmap
from .assembly import BasisSet, LayerOperators, assemble_q1, build_layer
from .grid import GridHierarchy, oversample

log = logging.getLogger(__name__)

DENSE_LIMIT = 2000
EIG_TOL = 1e-10


class EigenSolverError(RuntimeError):
    pass


@dataclass
class SpectralResult:
    """Smallest eigenpairs of a(phi, v) = sigma s(phi, v) on one coarse element.

    ``vectors`` are s-normalized and live on ``dofs`` (the element's fine
    nodes minus those on the domain boundary); ``s_vectors`` holds s_i
    applied to them.  ``next_eigenvalue`` is the first discarded
    eigenvalue, NaN when the element has no more dofs.
    """

    element: int
    layer: int
    eigenvalues: np.ndarray
    vectors: np.ndarray
    dofs: np.ndarray
    next_eigenvalue: float
    residuals: np.ndarray
    s_vectors: np.ndarray = None


def element_matrices(grid: GridHierarchy, ops: LayerOperators, i: int):
    """Local a_i and s_i on element ``i`` (natural conditions on its edges)."""
    if ops.kappa is None:
        raise ValueError("layer operators carry no kappa; build them with build_layer")
    cells = grid.element_cells(i)
    nodes = grid.element_nodes(i)
    dofs = nodes[~grid.boundary_mask[nodes]]
    A = assemble_q1(grid, ops.coefficients, "stiffness", cells=cells)[dofs][:, dofs]
    S = assemble_q1(grid, ops.kappa, "mass", cells=cells)[dofs][:, dofs]
    return sp.csr_matrix(A), sp.csr_matrix(S), dofs


def _fix_signs(vectors):
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def generalized_eigs(A, S, count: int, dense_limit: int = DENSE_LIMIT, tol: float = EIG_TOL):
    """``count`` smallest eigenpairs of A x = sigma S x with S-orthonormal x.

    Dense LAPACK below ``dense_limit`` dofs, shift-invert Lanczos above.
    Returns eigenvalues, vectors and relative residual norms.
    """
    n = A.shape[0]
    count = min(count, n)
    if n <= dense_limit:
        vals, vecs = la.eigh(_dense(A), _dense(S), subset_by_index=[0, count - 1])
    else:
        # A may be singular (constants), so shift slightly below zero
        shift = -1e-8 * abs(A.diagonal()).max() / abs(S.diagonal()).max()
        vals, vecs = spla.eigsh(sp.csc_matrix(A), k=count, M=sp.csc_matrix(S), sigma=shift, which="LM", tol=1e-14)
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        norms = np.sqrt(np.einsum("ij,ij->j", vecs, S @ vecs))
        vecs = vecs / norms
    vecs = _fix_signs(vecs)
    AV, SV = A @ vecs, S @ vecs
    scale = (_norm1(A) + np.abs(vals) * _norm1(S)) * np.linalg.norm(vecs, axis=0)
    residuals = np.linalg.norm(AV - SV * vals, axis=0) / scale
    if np.any(residuals > tol):
        raise EigenSolverError(f"eigen-residuals {residuals.max():.2e} exceed {tol:.0e}")
    return vals, vecs, residuals


def _norm1(M):
    return spla.norm(M, 1) if sp.issparse(M) else np.linalg.norm(M, 1)


def _dense(M):
    return M.toarray() if sp.issparse(M) else np.asarray(M)


def local_spectral(
    grid: GridHierarchy, ops: LayerOperators, i: int, count: int = 1, dense_limit: int = DENSE_LIMIT
) -> SpectralResult:
    A, S, dofs = element_matrices(grid, ops, i)
    want = min(count + 1, len(dofs))
    vals, vecs, res = generalized_eigs(A, S, want, dense_limit)
    nxt = float(vals[count]) if len(vals) > count else float("nan")
    return SpectralResult(
        element=i,
        layer=ops.k,
        eigenvalues=vals[:count],
        vectors=vecs[:, :count],
        dofs=dofs,
        next_eigenvalue=nxt,
        residuals=res[:count],
        s_vectors=S @ vecs[:, :count],
    )


def spectral_layer(grid, ops, count=1, dense_limit=DENSE_LIMIT, workers=None) -> list[SpectralResult]:
    counts = np.broadcast_to(np.asarray(count), (grid.n_elements,))
    results = pmap(lambda i: local_spectral(grid, ops, i, int(counts[i]), dense_limit), range(grid.n_elements), workers)
    lam = min((r.next_eigenvalue for r in results if np.isfinite(r.next_eigenvalue)), default=float("nan"))
    log.info("layer %d: min first discarded eigenvalue (Lambda) = %.4g", ops.k, lam)
    return results


def _interior_position(grid):
    pos = np.full(grid.n_nodes, -1)
    pos[grid.interior_dofs] = np.arange(grid.n_interior)
    return pos


def _embed(grid, results, attr):
    pos = _interior_position(grid)
    total = sum(r.vectors.shape[1] for r in results)
    out = np.zeros((grid.n_interior, total))
    owner = np.empty(total, dtype=int)
    col = 0
    for r in results:
        n = r.vectors.shape[1]
        out[pos[r.dofs], col : col + n] = getattr(r, attr)
        owner[col : col + n] = r.element
        col += n
    return out, owner


def auxiliary_matrix(grid: GridHierarchy, results: list[SpectralResult]) -> tuple[np.ndarray, np.ndarray]:
    """Auxiliary functions as interior-dof columns, plus owning element per column.

    Each column holds phi_j^{(i)} on the nodes of K_i; the function itself is
    the element-local one extended by zero (broken across element edges).
    """
    return _embed(grid, results, "vectors")


def constraint_matrix(grid: GridHierarchy, results: list[SpectralResult]) -> np.ndarray:
    """Columns b with b . v = s_i(phi_j^{(i)}, v) for every interior-dof v."""
    return _embed(grid, results, "s_vectors")[0]


def auxiliary_basis(grid: GridHierarchy, results: list[SpectralResult]) -> BasisSet:
    Phi, owner = auxiliary_matrix(grid, results)
    return BasisSet(
        grid.extend(Phi),
        "auxiliary",
        meta={
            "element": owner,
            "layer": np.concatenate([np.full(r.vectors.shape[1], r.layer) for r in results]),
            "eigenvalue": np.concatenate([r.eigenvalues for r in results]),
        },
    )


def aux_projection(grid: GridHierarchy, results: list[SpectralResult]):
    """pi_k as coefficients: v -> (s_i(v, phi_j^{(i)}))_{i,j}.

    The auxiliary functions are s_i-orthonormal on each element, so these
    are the coordinates of pi_k v in the broken space V_aux, and
    s(pi u, pi v) is the dot product of the coefficient vectors.
    """
    B = constraint_matrix(grid, results)

    def project(v):
        return B.T @ v

    return project


def cem_basis(
    grid: GridHierarchy,
    ops: LayerOperators,
    results: list[SpectralResult],
    m: int = 3,
    workers=None,
) -> BasisSet:
    """Localized CEM functions psi_j^{(i,k)} on the oversampled patches K_{i,m}.

    Each solves a(psi, v) + s(pi psi, pi v) = s(phi_j^{(i)}, v) for every v
    vanishing on the patch boundary.  The pi-term is the low-rank product
    B B^T with B the constraint columns of the patch's elements, handled by
    Woodbury on a sparse factorization of the patch stiffness.
    """
    if len(results) != grid.n_elements:
        raise ValueError("need one spectral result per coarse element")
    Phi, owner = auxiliary_matrix(grid, results)
    SPhi = constraint_matrix(grid, results)
    pos = _interior_position(grid)

    def solve(i):
        region = oversample(grid, i, m)
        p = pos[region.interior_dofs]
        B = SPhi[p][:, np.isin(owner, region.elements)]
        rhs = SPhi[p][:, owner == i]
        X = _patch_solve(ops.A[p][:, p], B, rhs, i)
        return region.interior_dofs, X

    solved = pmap(solve, range(grid.n_elements), workers)
    vectors = np.zeros((grid.n_nodes, Phi.shape[1]))
    for i, (dofs, X) in enumerate(solved):
        vectors[np.ix_(dofs, np.flatnonzero(owner == i))] = X
    eig = np.concatenate([r.eigenvalues for r in results])
    index = np.concatenate([np.arange(r.vectors.shape[1]) for r in results])
    return BasisSet(
        vectors,
        "cem",
        meta={"layer": np.full(len(owner), ops.k), "element": owner, "eigenvalue": eig, "index": index},
        info={"m": int(m)},
    )


def _patch_solve(A, B, rhs, i):
    try:
        lu = spla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:
        raise np.linalg.LinAlgError(f"singular patch system for element {i}") from exc
    Y = lu.solve(np.asfortranarray(B))
    Z = lu.solve(np.asfortranarray(rhs))
    C = np.eye(B.shape[1]) + B.T @ Y
    return Z - Y @ la.solve(C, B.T @ Z, assume_a="pos")


def cem_system_residual(grid, ops, results, basis: BasisSet, i: int, m: int) -> float:
    """Max relative residual of the patch variational equations of element ``i``."""
    _, owner = auxiliary_matrix(grid, results)
    SPhi = constraint_matrix(grid, results)
    pos = _interior_position(grid)
    region = oversample(grid, i, m)
    p = pos[region.interior_dofs]
    cols = np.flatnonzero(basis.meta["element"] == i)
    psi = grid.restrict(basis.vectors[:, cols])
    # pi acts with every auxiliary function; those outside the patch see zero
    lhs = (ops.A @ psi + SPhi @ (SPhi.T @ psi))[p]
    rhs = SPhi[p][:, owner == i]
    return float(np.abs(lhs - rhs).max() / np.abs(rhs).max())


def layer_cem(grid, coefficients, k=0, count=1, m=3, include_boundary_nodes=False, workers=None):
    """Full per-layer pipeline: forms, chi, kappa, spectral problems, CEM basis."""
    ops, chi = build_layer(grid, coefficients, k, include_boundary_nodes)
    results = spectral_layer(grid, ops, count, workers=workers)
    return ops, cem_basis(grid, ops, results, m, workers), results


def build_vcem(sets) -> BasisSet:
    """Concatenate per-layer CEM sets (no orthogonalization)."""
    sets = list(sets)
    if not sets:
        raise ValueError("no CEM basis sets given")
    n = {s.n_dofs for s in sets}
    if len(n) != 1:
        raise ValueError("basis sets live on different fine grids")
    keys = set.intersection(*(set(s.meta) for s in sets))
    meta = {k: np.concatenate([s.meta[k] for s in sets]) for k in sorted(keys)}
    info = {"m": sets[0].info.get("m"), "layers": sorted({int(l) for s in sets for l in s.meta.get("layer", [])})}
    return BasisSet(np.hstack([s.vectors for s in sets]), "cem", meta=meta, info=info)
