import numpy as np
import pytest
import scipy.linalg as la
import sympy as sym

from parawave.assembly import (
    assemble_layer,
    assemble_q1,
    build_layer,
    cell_gradients,
    dump_coo,
    h1_gram,
    kappa_tilde,
    load_coo,
    mass_matrix,
    msfem_partition,
)
from parawave.grid import build_grids


def _sympy_element(side):
    """Q1 stiffness and mass on [0, side]^2 by symbolic integration."""
    x, y = sym.symbols("x y")
    s = sym.nsimplify(side)
    shapes = [(1 - x / s) * (1 - y / s), x / s * (1 - y / s), (1 - x / s) * y / s, x / s * y / s]
    K = sym.zeros(4, 4)
    Mm = sym.zeros(4, 4)
    for a in range(4):
        for b in range(4):
            grad = sym.diff(shapes[a], x) * sym.diff(shapes[b], x) + sym.diff(shapes[a], y) * sym.diff(shapes[b], y)
            K[a, b] = sym.integrate(grad, (x, 0, s), (y, 0, s))
            Mm[a, b] = sym.integrate(shapes[a] * shapes[b], (x, 0, s), (y, 0, s))
    return np.array(K, dtype=float), np.array(Mm, dtype=float)


def test_two_by_two_cells_against_symbolic():
    g = build_grids(2, 2)  # 4x4 fine cells; use the lower-left 2x2 block
    n = g.n_fine
    cells = np.array([0, 1, n, n + 1])
    c = np.ones(g.n_cells)
    c[cells] = [1.0, 2.0, 3.0, 4.0]
    Ke, Me = _sympy_element(g.side)
    K = np.zeros((g.n_nodes, g.n_nodes))
    Mm = np.zeros_like(K)
    for cell in cells:
        d = g.cell_dofs[cell]
        K[np.ix_(d, d)] += c[cell] * Ke
        Mm[np.ix_(d, d)] += c[cell] * Me
    assert np.allclose(assemble_q1(g, c, "stiffness", cells=cells).toarray(), K, rtol=0, atol=1e-14)
    assert np.allclose(assemble_q1(g, c, "mass", cells=cells).toarray(), Mm, rtol=0, atol=1e-16)
    # centre node of the block couples to all four cells
    centre = g.node_index(1, 1)
    assert np.isclose(K[centre, centre], (1 + 2 + 3 + 4) * 2 / 3)


def test_homogeneous_layer(grid44):
    ops = assemble_layer(grid44, np.ones(grid44.n_cells))
    full = assemble_q1(grid44, np.ones(grid44.n_cells), "stiffness").toarray()
    inner = grid44.node_ij
    away = np.flatnonzero((inner.min(axis=1) > 1) & (inner.max(axis=1) < grid44.n_fine - 1))
    assert np.allclose(full[away].sum(axis=1), 0, atol=1e-13)
    assert np.allclose(ops.Mc.toarray(), ops.M.toarray())


def test_layer_errors(grid44):
    with pytest.raises(ValueError):
        assemble_layer(grid44, np.ones(5))
    c = np.ones(grid44.n_cells)
    c[3] = 0
    with pytest.raises(ValueError):
        assemble_layer(grid44, c)


def test_symmetry_and_definiteness(grid44, rng):
    c = rng.uniform(0.5, 20, grid44.n_cells)
    ops, _ = build_layer(grid44, c)
    u, w = rng.standard_normal((2, grid44.n_interior))
    for P in (ops.A, ops.Mc, ops.M, ops.S):
        assert abs(u @ (P @ w) - w @ (P @ u)) <= 1e-12 * abs(u @ (P @ w)) + 1e-14
        assert la.eigvalsh(P.toarray()).min() > 0


def test_msfem_homogeneous_is_bilinear_hat(grid44):
    chi = msfem_partition(grid44, np.ones(grid44.n_cells))
    g = grid44
    L = g.coarse_side
    for j in range(g.n_coarse_nodes):
        jx, jy = g.coarse_node_ij[j]
        hat = np.clip(1 - np.abs(g.coords[:, 0] / L - jx), 0, None) * np.clip(1 - np.abs(g.coords[:, 1] / L - jy), 0, None)
        assert np.allclose(chi.vectors[:, j], hat, atol=1e-12)


def test_partition_of_unity(grid44, rng):
    chi = msfem_partition(grid44, rng.uniform(1, 100, grid44.n_cells))
    assert np.abs(chi.vectors.sum(axis=1) - 1).max() <= 1e-10


def test_msfem_support(grid44, rng):
    chi = msfem_partition(grid44, rng.uniform(1, 10, grid44.n_cells))
    g = grid44
    for j in g.coarse_interior_nodes:
        jx, jy = g.coarse_node_ij[j]
        ix, iy = g.node_ij.T
        outside = (np.abs(ix - jx * g.refine) >= g.refine) | (np.abs(iy - jy * g.refine) >= g.refine)
        assert np.all(chi.vectors[outside, j] == 0)


def test_msfem_checkerboard_dense_lu():
    g = build_grids(2, 4)
    ex = g.cell_element % 2
    ey = g.cell_element // 2
    c = np.where((ex + ey) % 2 == 0, 1.0, 10.0)
    chi = msfem_partition(g, c)
    L = g.coarse_side
    for e in range(g.n_elements):
        nodes = g.element_nodes(e)
        A = assemble_q1(g, c, "stiffness", cells=g.element_cells(e)).toarray()[np.ix_(nodes, nodes)]
        ix, iy = g.node_ij[nodes].T
        ex0, ey0 = g.element_ij(e)
        edge = (ix == ex0 * g.refine) | (ix == (ex0 + 1) * g.refine) | (iy == ey0 * g.refine) | (iy == (ey0 + 1) * g.refine)
        for j in range(g.n_coarse_nodes):
            jx, jy = g.coarse_node_ij[j]
            hat = np.clip(1 - np.abs(g.coords[nodes, 0] / L - jx), 0, None) * np.clip(1 - np.abs(g.coords[nodes, 1] / L - jy), 0, None)
            # dense system: harmonic rows inside, identity rows on the edge
            S = A.copy()
            b = np.zeros(len(nodes))
            S[edge] = 0.0
            S[edge, np.flatnonzero(edge)] = 1.0
            b[edge] = hat[edge]
            ref = np.linalg.solve(S, b)
            assert np.allclose(chi.vectors[nodes, j], ref, atol=1e-12)


def test_kappa_homogeneous_analytic():
    g = build_grids(3, 4)
    chi = msfem_partition(g, np.ones(g.n_cells))
    kappa, _ = kappa_tilde(g, np.ones(g.n_cells), chi)
    L = g.coarse_side
    x, y = g.cell_centers.T
    ref = np.zeros(g.n_cells)
    for j in g.coarse_interior_nodes:
        jx, jy = g.coarse_node_ij[j]
        ux, uy = x / L - jx, y / L - jy
        wx, wy = np.clip(1 - np.abs(ux), 0, None), np.clip(1 - np.abs(uy), 0, None)
        dx = np.where(np.abs(ux) < 1, -np.sign(ux) / L, 0.0)
        dy = np.where(np.abs(uy) < 1, -np.sign(uy) / L, 0.0)
        ref += (dx * wy) ** 2 + (wx * dy) ** 2
    assert np.allclose(kappa, ref, rtol=1e-12)
    assert np.all(kappa >= 0)


def test_kappa_scales_with_c(grid44, rng):
    c = rng.uniform(1, 5, grid44.n_cells)
    k1, _ = kappa_tilde(grid44, c, msfem_partition(grid44, c))
    k2, _ = kappa_tilde(grid44, 2 * c, msfem_partition(grid44, 2 * c))
    assert np.allclose(k2, 2 * k1, rtol=1e-12)


def test_kappa_boundary_switch(grid44):
    c = np.ones(grid44.n_cells)
    chi = msfem_partition(grid44, c)
    k_in, _ = kappa_tilde(grid44, c, chi)
    k_all, _ = kappa_tilde(grid44, c, chi, include_boundary_nodes=True)
    assert np.all(k_all >= k_in - 1e-14) and k_all.sum() > k_in.sum()
    with pytest.raises(ValueError):
        kappa_tilde(grid44, c, type(chi)(chi.vectors[:, :3], "msfem", meta={"interior": chi.meta["interior"][:3]}))


def test_s_norm_bound(grid44, rng):
    c = rng.uniform(1, 20, grid44.n_cells)
    ops, _ = build_layer(grid44, c)
    V = rng.standard_normal((grid44.n_interior, 50))
    ratio = np.sqrt(np.einsum("ij,ij->j", V, ops.S @ V) / np.einsum("ij,ij->j", V, ops.M @ V))
    bound = np.sqrt(c.max()) / grid44.H
    # measured constant for bilinear partitions of unity
    assert ratio.max() <= 4.0 * bound


def test_coercivity_surrogate(grid44, rng):
    c = rng.uniform(1, 20, grid44.n_cells)
    ops = assemble_layer(grid44, c)
    X = h1_gram(grid44).toarray()
    lam = la.eigvalsh(ops.A.toarray(), X)
    assert lam.min() > 0 and lam.max() <= c.max()


def test_cell_gradients_linear(grid44):
    v = 2.0 * grid44.coords[:, 0] - 3.0 * grid44.coords[:, 1]
    gx, gy = cell_gradients(grid44, v)
    assert np.allclose(gx, 2.0) and np.allclose(gy, -3.0)


def test_coo_roundtrip(tmp_path, grid44):
    M = mass_matrix(grid44)
    dump_coo(M, tmp_path / "m.txt")
    assert (load_coo(tmp_path / "m.txt", M.shape) != M).nnz == 0
