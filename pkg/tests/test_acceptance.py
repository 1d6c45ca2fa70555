"""Acceptance criteria, one test per criterion.

Run with ``pytest tests/test_acceptance.py -v``; each test prints the
measured quantities and a PASS/FAIL summary is appended to the session
report.  Tolerances are the contractual ones and must not be relaxed.
"""

import time

import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp

from parawave.assembly import build_layer, h1_gram, mass_matrix, msfem_partition
from parawave.cem import element_matrices, local_spectral, spectral_layer, auxiliary_matrix
from parawave.cli import load_config, run
from parawave.evolve import SolveConfig, cfl_check, sweep_z
from parawave.grid import build_grids
from parawave.media import MediumField, field_from_raster, synthetic_marmousi
from parawave.metrics import energy_series, step_inequality
from parawave.pod import correlation_matrix, pod, pod_basis, projection_error

from conftest import two_inclusion_element

POD_REL = 1e-10
EXP1_MAX = 1e-2
EXP2_MAX = 5e-3
STEP_SLACK = 1e-10
CFL_FACTOR = 4.0
ORACLE_REL = 1e-12
SPECTRAL_REL = 1e-8
POU_MAX = 1e-10


def _fmt(a):
    return np.array2string(np.asarray(a), precision=3, max_line_width=200)


# 1 ---------------------------------------------------------------------------
@pytest.mark.parametrize("n", [3, 10, 50])
def test_criterion_1_pod_error_identity(n):
    rng = np.random.default_rng(100 + n)
    g = build_grids(4, 4)
    X = h1_gram(g)
    Y = rng.standard_normal((g.n_interior, n))
    K = correlation_matrix(Y, X)
    full = pod_basis(K, Y, rank=1)
    total = full.eigenvalues.sum()
    worst = 0.0
    for ell in range(1, full.eigenvalues.size + 1):
        res = pod_basis(K, Y, rank=ell)
        tail = res.eigenvalues[ell:].sum()
        worst = max(worst, abs(projection_error(Y, res, X) - tail) / total)
    print(f"n={n}: max |mean projection error - eigenvalue tail| / sum(lambda) = {worst:.2e}")
    assert worst <= POD_REL


# 2 ---------------------------------------------------------------------------
def _exp1(name, tmp_path, overrides=None):
    cfg = load_config(name, overrides)
    t0 = time.perf_counter()
    res = run(cfg, tmp_path / name, cache_dir=None)
    return res.report.e2, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_2_experiment1(tmp_path):
    desk, t_desk = _exp1("experiment1-desk", tmp_path)
    print(f"desk (4x4 coarse, 32x32 fine, K=6): {t_desk:.1f} s, e2 = {_fmt(desk)}")
    full, t_full = _exp1("experiment1", tmp_path)
    print(f"full (10x10 coarse, 100x100 fine, K=30): {t_full:.1f} s, e2 = {_fmt(full)}")
    print(f"full: median e2 = {np.median(full):.3e}")
    failures = []
    if not np.all(desk <= EXP1_MAX):
        failures.append(f"desk max e2 {desk.max():.3e} > {EXP1_MAX}")
    if t_desk >= 60:
        failures.append(f"desk run took {t_desk:.0f} s")
    if not np.all(full <= EXP1_MAX):
        failures.append(f"full max e2 {full.max():.3e} > {EXP1_MAX}")
    if t_full > 1800:
        failures.append(f"full run took {t_full:.0f} s")
    assert not failures, "; ".join(failures)


# 3 ---------------------------------------------------------------------------
@pytest.mark.slow
def test_criterion_3_experiment2(tmp_path):
    cfg = load_config("experiment2")
    res = run(cfg, tmp_path / "exp2", cache_dir=None)
    e2 = res.report.e2
    print(f"CEM {len(res.cem)} -> POD {len(res.pod)}; e2 = {_fmt(e2)} (published k=10 magnitude 3.9e-4)")
    assert len(res.cem) == 300 and len(res.pod) == 50
    assert np.all(e2 <= EXP2_MAX), f"max e2 {e2.max():.3e} > {EXP2_MAX}"


# 4 ---------------------------------------------------------------------------
def _desk_space():
    from parawave.cli import build_medium, phase_build_basis, phase_pod, Cache

    cfg = load_config("experiment1-desk")
    g = build_grids(cfg.n_coarse, cfg.refine)
    med = build_medium(cfg, g)
    basis = phase_pod(cfg, g, med, phase_build_basis(cfg, g, med, Cache(None)), Cache(None))
    return cfg, g, med, g.restrict(basis.vectors)


def _unstable(g, med, R, cfg, dt, v0, n_steps=4000):
    """Energy turns negative or non-finite within the horizon (random start data)."""
    conf = SolveConfig(dt=dt, n_steps=n_steps, dz=cfg.dz, K=cfg.K, v0=lambda x, z: v0)
    res = sweep_z(g, med, R, conf)
    for traj, ops in zip(res.layers, res.reduced_ops):
        E = energy_series(traj, ops, dt)
        if not np.all(np.isfinite(E)) or np.any(E < -1e-10 * np.abs(E).max()):
            return True
    return False


def test_criterion_4_cfl_stability():
    cfg, g, med, R = _desk_space()
    conf = cfg.solve_config()
    res = sweep_z(g, med, R, conf)
    report = cfl_check(res.reduced_ops, conf.dt, g.H, med.c_max)
    assert report.passed, f"CFL check fails at the configured dt (delta={report.delta:.3e})"
    M = mass_matrix(g)
    prev, prev_mass, worst = res.boundary, M, -np.inf
    for traj, ops in zip(res.layers, res.reduced_ops):
        chk = step_inequality(traj, prev, ops, prev_mass, conf.dt, conf.dz, slack=STEP_SLACK)
        scale = np.maximum(np.abs(chk.lhs), np.abs(chk.rhs))
        worst = max(worst, float(np.max((chk.lhs - chk.rhs) / scale)))
        assert chk.holds, f"per-step inequality broken on layer {traj.k}"
        assert chk.energy_nonnegative
        prev, prev_mass = traj, ops.M
    print(f"delta = {report.delta:.4e}; worst relative (lhs - rhs) = {worst:.2e}")

    v0 = np.random.default_rng(11).standard_normal(g.n_interior)
    ratio, predicted, observed = _bisect(g, med, R, cfg, res.reduced_ops, v0)
    print(f"desk: predicted dt limit {predicted:.4e}; instability first observed at {observed:.4e} (ratio {ratio:.3f})")
    homog = MediumField(np.ones_like(med.values), dz=med.dz)
    toy_ops = sweep_z(g, homog, R, conf).reduced_ops
    toy = _bisect(g, homog, R, cfg, toy_ops, v0)[0]
    print(f"same space, homogeneous medium: ratio {toy:.3f}")
    assert 1.0 <= ratio <= CFL_FACTOR, f"observed/predicted threshold ratio {ratio:.2f} outside [1, {CFL_FACTOR}]"


def _bisect(g, med, R, cfg, ops, v0):
    predicted = cfl_check(ops, cfg.dt, g.H, med.c_max).dt_limit
    lo, hi = 0.5 * predicted, 16.0 * predicted
    assert not _unstable(g, med, R, cfg, lo, v0) and _unstable(g, med, R, cfg, hi, v0)
    while hi / lo > 1.01:
        mid = np.sqrt(lo * hi)
        lo, hi = (lo, mid) if _unstable(g, med, R, cfg, mid, v0) else (mid, hi)
    return hi / predicted, predicted, hi


# 5 ---------------------------------------------------------------------------
def _dense_fully_discrete(g, med, conf):
    x = g.coords[g.interior_dofs]
    from parawave.assembly import assemble_layer

    M = mass_matrix(g).toarray()
    prev = np.array([conf.boundary(x, t) for t in conf.times()])
    out = []
    for k in range(1, conf.K + 1):
        ops = assemble_layer(g, med.layer(k))
        A, Mc = ops.A.toarray(), ops.Mc.toarray()
        lhs = Mc / conf.dt**2 + M / (2 * conf.tau)
        v = np.zeros((conf.n_steps + 1, g.n_interior))
        for n in range(1, conf.n_steps):
            rhs = Mc @ (2 * v[n] - v[n - 1]) / conf.dt**2 + M @ v[n - 1] / (2 * conf.tau) - 0.5 * A @ v[n]
            rhs += M @ (prev[n + 1] - prev[n - 1]) / (2 * conf.tau)
            v[n + 1] = la.solve(lhs, rhs)
        out.append(v)
        prev = v
    return out


def test_criterion_5_oracle_equivalence():
    g = build_grids(2, 4)  # 8x8 fine cells
    rng = np.random.default_rng(5)
    med = MediumField(rng.uniform(1, 20, (3, g.n_cells)), dz=1e-4)
    conf = SolveConfig(dt=1e-5, n_steps=3, dz=1e-4, K=2)
    res = sweep_z(g, med, sp.identity(g.n_interior, format="csr"), conf)
    ref = _dense_fully_discrete(g, med, conf)
    worst = 0.0
    for traj, dense in zip(res.layers, ref):
        for n in range(conf.n_steps + 1):
            nrm = np.linalg.norm(dense[n])
            diff = np.linalg.norm(traj.fine(n) - dense[n])
            worst = max(worst, diff / nrm if nrm > 0 else diff)
    print(f"max relative state difference = {worst:.2e}")
    assert worst <= ORACLE_REL


# 6 ---------------------------------------------------------------------------
@pytest.mark.parametrize("coeff", ["homogeneous", "two_inclusion"])
def test_criterion_6_spectral_correctness(coeff):
    g = build_grids(3, 4)  # 4x4 fine cells per element
    c = np.ones(g.n_cells) if coeff == "homogeneous" else two_inclusion_element(g, 4, 1e3)
    ops, _ = build_layer(g, c)
    worst = 0.0
    for i in range(g.n_elements):
        A, S, _ = element_matrices(g, ops, i)
        ref = la.eigh(A.toarray(), S.toarray(), eigvals_only=True, driver="gv")
        count = len(ref) - 1
        got = local_spectral(g, ops, i, count=count).eigenvalues
        worst = max(worst, float(np.max(np.abs(got - ref[:count]) / np.maximum(np.abs(ref[:count]), ref[-1] * 1e-3))))
    print(f"{coeff}: max relative eigenvalue difference = {worst:.2e}")
    assert worst <= SPECTRAL_REL


# 7 ---------------------------------------------------------------------------
def test_criterion_7_structural_invariants():
    g = build_grids(4, 5)
    rng = np.random.default_rng(7)
    c = field_from_raster(synthetic_marmousi((60, 60), seed=2), g, seed=3, layers=1).layer(0)
    ops, chi = build_layer(g, c)
    u, w = rng.standard_normal((2, g.n_interior))
    for name in ("A", "Mc", "M", "S"):
        P = getattr(ops, name)
        assert abs(u @ (P @ w) - w @ (P @ u)) <= 1e-12 * abs(u @ (P @ w)), name
        assert la.eigvalsh(P.toarray()).min() > 0, name
    chi = msfem_partition(g, c)
    pou = np.abs(chi.vectors.sum(axis=1) - 1).max()
    assert pou <= POU_MAX
    results = spectral_layer(g, ops, 3)
    worst_s = 0.0
    for r in results:
        A, S, _ = element_matrices(g, ops, r.element)
        worst_s = max(worst_s, np.abs(r.vectors.T @ (S @ r.vectors) - np.eye(3)).max())
    assert worst_s <= 1e-10
    X = h1_gram(g)
    Phi, _ = auxiliary_matrix(g, results)
    res = pod(Phi, X, rank=20)
    orth = np.abs(res.basis.T @ (X @ res.basis) - np.eye(20)).max()
    assert orth <= 1e-10
    a = field_from_raster(synthetic_marmousi((60, 60), seed=2), g, seed=3, layers=3)
    b = field_from_raster(synthetic_marmousi((60, 60), seed=2), g, seed=3, layers=3)
    assert np.array_equal(a.values, b.values)
    print(f"partition of unity {pou:.1e}; s-normalization {worst_s:.1e}; POD orthonormality {orth:.1e}")


# note ------------------------------------------------------------------------
def test_note_refinement_decreases_error(tmp_path):
    """Halving H and tau on desk scale lowers the error at every depth."""
    base, _ = _exp1("experiment1-desk", tmp_path)
    finer_cfg = {"grid.n_coarse": "8", "grid.refine": "4", "pod.rank": "64",
                 "discretization.dt": "5e-6", "discretization.n_steps": "1000"}
    finer, _ = _exp1("experiment1-desk", tmp_path / "h", finer_cfg)
    print(f"H, tau: e2 = {_fmt(base)}\nH/2, tau/2: e2 = {_fmt(finer)}")
    assert np.all(finer < base)
