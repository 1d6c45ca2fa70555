import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parawave.pod import (
    build_snapshots,
    correlation_matrix,
    orthonormal_span,
    pod,
    pod_basis,
    projection_error,
    ritz_project,
    trapezoid_weights,
)


def _spd(rng, n):
    Q = rng.standard_normal((n, n))
    return Q @ Q.T + n * np.eye(n)


def test_identical_snapshots():
    y = np.array([0.6, 0.8, 0.0])
    K = correlation_matrix(np.column_stack([y] * 4))
    assert np.allclose(K, np.full((4, 4), 0.25))
    res = pod(np.column_stack([y] * 4), rank=1)
    assert res.eigenvalues.size == 1 and np.isclose(res.eigenvalues[0], 1.0)


def test_orthonormal_snapshots():
    assert np.allclose(correlation_matrix(np.eye(5)[:, :3]), np.eye(3) / 3)


def test_double_loop(rng):
    Y = rng.standard_normal((5, 3))
    X = _spd(rng, 5)
    K = correlation_matrix(Y, X)
    ref = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            ref[i, j] = sum(Y[a, j] * X[a, b] * Y[b, i] for a in range(5) for b in range(5)) / 3
    assert np.allclose(K, ref, rtol=1e-13)


def test_single_snapshot(rng):
    y = rng.standard_normal(6)
    X = _spd(rng, 6)
    res = pod(y, X, rank=1)
    assert np.allclose(res.basis[:, 0], y / np.sqrt(y @ X @ y))


@pytest.mark.parametrize("n", [3, 10, 50])
def test_error_formula(rng, n):
    Y = rng.standard_normal((60, n))
    X = _spd(rng, 60)
    res = pod(Y, X, rank=1)
    for ell in range(1, res.eigenvalues.size + 1):
        r = pod_basis(correlation_matrix(Y, X), Y, rank=ell)
        err = projection_error(Y, r, X)
        tail = res.eigenvalues[ell:].sum()
        assert abs(err - tail) <= 1e-10 * res.eigenvalues.sum()


@pytest.mark.parametrize("gram", [None, "spd"])
def test_orthonormal_basis(rng, gram):
    Y = rng.standard_normal((30, 12))
    X = None if gram is None else _spd(rng, 30)
    res = pod(Y, X, rank=8)
    G = res.basis.T @ (res.basis if X is None else X @ res.basis)
    assert np.allclose(G, np.eye(8), atol=1e-10)
    assert np.all(np.diff(res.eigenvalues) <= 0) and np.all(res.eigenvalues > 0)


def test_zeta_rule(rng):
    Y = rng.standard_normal((40, 20)) * np.logspace(0, -3, 20)
    res = pod(Y, zeta=0.01)
    lam = res.eigenvalues
    tails = 1 - np.cumsum(lam) / lam.sum()
    assert tails[res.rank - 1] <= 0.01 < tails[res.rank - 2]
    assert res.zeta <= 0.01


def test_rank_cut_and_errors(rng):
    base = rng.standard_normal((20, 3))
    Y = base @ rng.standard_normal((3, 8))
    res = pod(Y, rank=3)
    assert res.eigenvalues.size == 3
    with pytest.raises(ValueError):
        pod(Y, rank=4)
    with pytest.raises(ValueError):
        pod(np.zeros((5, 3)), rank=1)
    with pytest.raises(ValueError):
        pod(Y, rank=2, zeta=0.1)
    with pytest.raises(ValueError):
        pod(Y, zeta=1.5)
    with pytest.raises(ValueError):
        correlation_matrix(Y, np.eye(3))


def test_ritz_projection(rng):
    Y = rng.standard_normal((6, 5))
    X = _spd(rng, 6)
    res = pod(Y, X, rank=3)
    assert np.allclose(ritz_project(res.basis[:, 1], res, X), [0, 1, 0], atol=1e-12)
    v = rng.standard_normal(6)
    # normal-equations oracle for the X-orthogonal projection
    B = res.basis
    coef = np.linalg.solve(B.T @ X @ B, B.T @ X @ v)
    assert np.allclose(ritz_project(v, res, X), coef, atol=1e-12)
    w = v - B @ coef
    assert np.allclose(ritz_project(w, res, X), 0, atol=1e-12)
    with pytest.raises(ValueError):
        ritz_project(np.ones(4), res, X)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), ell=st.integers(1, 4))
def test_best_approximation_and_monotone(seed, ell):
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((12, 6))
    res = pod(Y, rank=5)
    v = rng.standard_normal(12)
    B = res.basis[:, :ell]
    best = np.linalg.norm(v - B @ (B.T @ v))
    other = B @ rng.standard_normal(ell)
    assert best <= np.linalg.norm(v - other) * (1 + 1e-12)
    errs = [projection_error(Y, res, rank=r) for r in range(1, 6)]
    assert all(a >= b - 1e-12 for a, b in zip(errs, errs[1:]))


def test_trajectory_snapshots(rng):
    K, N, d, dt, dz = 10, 6, 4, 0.1, 0.5
    trajs = [rng.standard_normal((N + 1, d)) for _ in range(K + 1)]
    Y, w, fam = build_snapshots("trajectory", trajs, dz=dz, dt=dt)
    assert fam == 3 * K + 2
    assert Y.shape == (d, fam * (N - 1))
    assert np.allclose(w[: N - 1], trapezoid_weights(N - 1, dt))
    n = 2
    col = lambda f: f * (N - 1) + (n - 1)
    assert np.allclose(Y[:, col(0)], trajs[0][n])
    assert np.allclose(Y[:, col(K + 1)], (trajs[0][n + 1] - 2 * trajs[0][n] + trajs[0][n - 1]) / dt**2)
    v = lambda k: (trajs[k][n + 1] - trajs[k][n - 1]) / (2 * dt)
    assert np.allclose(Y[:, col(2 * K + 2)], (v(1) - v(0)) / dz)
    with pytest.raises(ValueError, match="all snapshots zero"):
        build_snapshots("trajectory", [np.zeros((5, 3))] * 3, dz=1.0, dt=1.0)
    with pytest.raises(ValueError):
        build_snapshots("trajectory", trajs[:1], dz=dz, dt=dt)


def test_trajectory_pod_scale(rng):
    trajs = [rng.standard_normal((6, 8)) for _ in range(3)]
    Y, w, fam = build_snapshots("trajectory", trajs, dz=1.0, dt=0.1)
    res = pod(Y, weights=w, scale=1.0 / fam, rank=4)
    assert np.allclose(res.basis.T @ res.basis, np.eye(4), atol=1e-10)
    err = projection_error(Y, res, weights=w, scale=1.0 / fam)
    assert np.isclose(err, res.tail, rtol=1e-10)


def test_basis_mode(rng):
    from parawave.assembly import BasisSet

    b = BasisSet(rng.standard_normal((9, 300)), "cem")
    Y, w, n = build_snapshots("basis", b)
    assert n == 300 and w is None and Y.shape == (9, 300)
    with pytest.raises(ValueError):
        build_snapshots("nonsense", b)


def test_orthonormal_span(rng):
    X = _spd(rng, 10)
    Y = rng.standard_normal((10, 3)) @ rng.standard_normal((3, 5))
    Q = orthonormal_span(Y, X)
    assert Q.shape == (10, 3)
    assert np.allclose(Q.T @ X @ Q, np.eye(3), atol=1e-10)
