"""Leapfrog in t, backward Euler in z: reduced solver, fine reference and CFL check.

For every layer k = 1..K and step n = 1..N-1 the scheme solves

    (Mc_k / dt^2 + M / (2 tau)) v^{n+1}
        = Mc_k (2 v^n - v^{n-1}) / dt^2 + M v^{n-1} / (2 tau) - A_k v^n / 2
          + (L_{k-1}^{n+1} - L_{k-1}^{n-1}) / (2 tau),

with tau = dt * dz and L_{k-1}^n the previous layer's state tested against
the current space, i.e. (v_{k-1}^n, w) for every basis function w.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import LayerOperators, assemble_layer, mass_matrix
from .grid import GridHierarchy
from .media import MediumField

log = logging.getLogger(__name__)


def sine_boundary(coords, t):
    """Layer-0 data sin(pi x1) sin(pi x2) sin(t)."""
    x = np.asarray(coords)
    return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]) * np.sin(t)


def sine_boundary_dt(coords, t):
    x = np.asarray(coords)
    return np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]) * np.cos(t)


@dataclass
class SolveConfig:
    """Time/z discretization and data.

    ``boundary(coords, t)`` gives layer 0 on the fine nodes; ``v0`` and
    ``v1`` map ``(coords, z)`` to the initial state and velocity (zero when
    None).  ``boundary_dt`` is only needed for the second-order start.
    """

    dt: float
    n_steps: int
    dz: float
    K: int
    boundary: Callable = sine_boundary
    boundary_dt: Callable | None = sine_boundary_dt
    v0: Callable | None = None
    v1: Callable | None = None
    z0: float = 0.0
    start_order: int = 1

    def __post_init__(self):
        if not (self.dt > 0 and self.dz > 0):
            raise ValueError("dt and dz must be positive")
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise ValueError("need at least two time steps")
        if int(self.K) != self.K or self.K < 1:
            raise ValueError("need at least one layer beyond z_0")
        if self.start_order not in (1, 2):
            raise ValueError("start_order must be 1 or 2")

    @property
    def tau(self) -> float:
        return self.dt * self.dz

    @property
    def T(self) -> float:
        return self.n_steps * self.dt

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def z(self, k: int) -> float:
        return self.z0 + k * self.dz


@dataclass
class ReducedOperators:
    """Galerkin restriction R^T P R of one layer's forms."""

    A: np.ndarray
    Mc: np.ndarray
    M: np.ndarray
    k: int = 0


@dataclass
class LayerTrajectory:
    """States v_k^n, n = 0..N, as coefficients in the columns of ``lift``."""

    k: int
    states: np.ndarray
    lift: object = field(repr=False, default=None)

    def fine(self, n: int = -1) -> np.ndarray:
        """Interior-dof vector of step ``n``."""
        v = self.states[n]
        return v if self.lift is None else self.lift @ v


def _sym(P):
    return 0.5 * (P + P.T)


def reduce_operators(ops: LayerOperators, R) -> ReducedOperators:
    """Project the layer forms onto the columns of R (interior-dof basis)."""
    if R.shape[0] != ops.A.shape[0]:
        raise ValueError(f"basis has {R.shape[0]} dofs, operators act on {ops.A.shape[0]}")

    def project(P):
        out = R.T @ (P @ R)
        if sp.issparse(out) and not sp.issparse(R):
            out = out.toarray()
        return _sym(sp.csr_matrix(out) if sp.issparse(out) else np.asarray(out))

    return ReducedOperators(A=project(ops.A), Mc=project(ops.Mc), M=project(ops.M), k=ops.k)


@dataclass
class CFLReport:
    c_inv: float
    delta: float
    passed: bool
    lambda_max: float
    dt: float
    H: float
    c_max: float

    @property
    def dt_limit(self) -> float:
        """Largest dt with delta >= 0."""
        return 2.0 / np.sqrt(self.c_max * self.lambda_max)


def max_generalized_eig(A, M) -> float:
    if sp.issparse(A) or sp.issparse(M):
        val = spla.eigsh(sp.csc_matrix(A), k=1, M=sp.csc_matrix(M), which="LA", tol=1e-10)[0]
        return float(val[0])
    return float(la.eigh(np.asarray(A), np.asarray(M), eigvals_only=True, subset_by_index=[A.shape[0] - 1] * 2)[0])


def cfl_check(operators, dt: float, H: float, c_max: float) -> CFLReport:
    """delta = 1/c_max - C_inv^2 dt^2 / (4 H^2) with the sharp C_inv = H sqrt(lambda_max(A, M))."""
    lam = max(max_generalized_eig(op.A, op.M) for op in operators)
    c_inv = H * np.sqrt(lam)
    delta = 1.0 / c_max - 0.25 * c_inv**2 * dt**2 / H**2
    report = CFLReport(float(c_inv), float(delta), bool(delta > 0), lam, dt, H, c_max)
    if not report.passed:
        log.warning("CFL condition violated: delta = %.3e (dt limit %.3e)", delta, report.dt_limit)
    return report


# -- time stepping ------------------------------------------------------------


class _Factor:
    def __init__(self, P):
        if sp.issparse(P):
            self._lu = spla.splu(sp.csc_matrix(P))
            self.solve = self._lu.solve
        else:
            try:
                c = la.cho_factor(P)
            except la.LinAlgError as exc:
                raise np.linalg.LinAlgError("reduced left-hand matrix is not positive definite") from exc
            self.solve = lambda b: la.cho_solve(c, b)


def _stepper(ops, config):
    dt2, two_tau = config.dt**2, 2.0 * config.tau
    lhs = ops.Mc / dt2 + ops.M / two_tau
    factor = _Factor(lhs)

    def step(v_now, v_old, load_new, load_old):
        rhs = ops.Mc @ (2.0 * v_now - v_old) / dt2 + ops.M @ v_old / two_tau - 0.5 * (ops.A @ v_now)
        rhs = rhs + (load_new - load_old) / two_tau
        return factor.solve(rhs)

    return step


def leapfrog_layer(ops, prev_loads, config: SolveConfig, start) -> np.ndarray:
    """Run one layer through all N steps; returns states of shape (N+1, dim).

    ``prev_loads[n]`` is the previous layer tested against this layer's
    space; ``start`` is the pair (v^0, v^1).
    """
    N = config.n_steps
    prev_loads = np.asarray(prev_loads)
    if prev_loads.shape[0] != N + 1:
        raise ValueError(f"previous layer has {prev_loads.shape[0]} time levels, need {N + 1}")
    step = _stepper(ops, config)
    states = np.empty((N + 1, prev_loads.shape[1]))
    states[0], states[1] = start
    for n in range(1, N):
        states[n + 1] = step(states[n], states[n - 1], prev_loads[n + 1], prev_loads[n - 1])
    return states


def boundary_trajectory(grid: GridHierarchy, config: SolveConfig) -> np.ndarray:
    """Layer-0 data on the interior dofs at every time level, shape (N+1, n_int)."""
    x = grid.coords[grid.interior_dofs]
    return np.array([config.boundary(x, t) for t in config.times()])


def _field(func, coords, z):
    return np.zeros(len(coords)) if func is None else np.asarray(func(coords, z), dtype=float)


def _solve(P, b):
    if sp.issparse(P):
        return spla.spsolve(sp.csc_matrix(P), b)
    return la.solve(P, b, assume_a="pos")


def startup_states(grid, config: SolveConfig, k: int, ops, R=None):
    """(v_k^0, v_k^1) from the initial data of layer k.

    v^0 is the L2 projection of v0(z_k) onto the span of R (the nodal
    values themselves when R is None); v^1 = v^0 + dt * (projected v1),
    plus dt^2/2 times the acceleration the equation gives at t = 0 when
    ``start_order=2``.
    """
    x = grid.coords[grid.interior_dofs]
    Mfine = mass_matrix(grid)

    def tested(f):
        return Mfine @ f if R is None else R.T @ (Mfine @ f)

    def proj(f):
        if R is None or not np.any(f):
            return f if R is None else np.zeros(R.shape[1])
        return _solve(ops.M, tested(f))

    z = config.z(k)
    u0, u1 = _field(config.v0, x, z), _field(config.v1, x, z)
    v0 = proj(u0)
    v1 = v0 + config.dt * proj(u1)
    if config.start_order == 2:
        if k == 1:
            if config.boundary_dt is None:
                raise ValueError("second-order start needs boundary_dt")
            prev_vel = np.asarray(config.boundary_dt(x, 0.0), dtype=float)
        else:
            prev_vel = _field(config.v1, x, config.z(k - 1))
        rhs = -tested(u1 - prev_vel) / config.dz - 0.5 * (ops.A @ v0)
        v1 = v1 + 0.5 * config.dt**2 * _solve(ops.Mc, rhs)
    return v0, v1


@dataclass
class SweepResult:
    """Reduced solution of every layer plus layer-0 data."""

    layers: list
    boundary: np.ndarray
    reduced_ops: list
    basis: np.ndarray

    def terminal_fine(self) -> np.ndarray:
        """(K, n_int) terminal states on the interior dofs for k = 1..K."""
        return np.array([t.fine(-1) for t in self.layers])


def sweep_z(
    grid: GridHierarchy,
    medium: MediumField,
    R,
    config: SolveConfig,
) -> SweepResult:
    """Solve layers k = 1..K in order in the space spanned by the columns of R.

    R holds interior-dof basis vectors (an identity gives the fine scheme).
    Layer k's forcing is the full trajectory of layer k-1.
    """
    if medium.K < config.K:
        raise ValueError(f"medium has {medium.K} layers beyond z_0, solve needs {config.K}")
    Mfine = mass_matrix(grid)
    G = boundary_trajectory(grid, config)
    loads = np.asarray((R.T @ (Mfine @ G.T)).T)
    layers, reduced = [], []
    for k in range(1, config.K + 1):
        ops = reduce_operators(assemble_layer(grid, medium.layer(k), k), R)
        start = startup_states(grid, config, k, ops, R)
        states = leapfrog_layer(ops, loads, config, start)
        layers.append(LayerTrajectory(k, states, R))
        reduced.append(ops)
        loads = np.asarray((ops.M @ states.T).T)
    return SweepResult(layers, G, reduced, R)


@dataclass
class FineResult:
    terminal: np.ndarray
    trajectories: list | None
    boundary_terminal: np.ndarray


def fine_reference(grid: GridHierarchy, medium: MediumField, config: SolveConfig, store_full: bool = False) -> FineResult:
    """The same scheme on the full fine space, time-outer to bound memory.

    Only three time levels per layer are kept unless ``store_full``.
    """
    if medium.K < config.K:
        raise ValueError(f"medium has {medium.K} layers beyond z_0, solve needs {config.K}")
    K, N = config.K, config.n_steps
    M = mass_matrix(grid)
    x = grid.coords[grid.interior_dofs]
    ops = [assemble_layer(grid, medium.layer(k), k) for k in range(1, K + 1)]
    steps = [_stepper(op, config) for op in ops]
    times = config.times()
    g = [config.boundary(x, t) for t in times[:3]]
    starts = [startup_states(grid, config, k, op) for k, op in zip(range(1, K + 1), ops)]
    # window[k] holds levels (n-1, n, n+1) of layer k; layer 0 is the data
    old = [g[0]] + [s[0] for s in starts]
    now = [g[1]] + [s[1] for s in starts]
    full = None
    if store_full:
        full = [np.empty((N + 1, grid.n_interior)) for _ in range(K)]
        for k in range(K):
            full[k][0], full[k][1] = old[k + 1], now[k + 1]
    for n in range(1, N):
        new = [np.asarray(config.boundary(x, times[n + 1]), dtype=float)]
        for k in range(1, K + 1):
            new.append(steps[k - 1](now[k], old[k], M @ new[k - 1], M @ old[k - 1]))
            if store_full:
                full[k - 1][n + 1] = new[k]
        old, now = now, new
    return FineResult(terminal=np.array(now[1:]), trajectories=full, boundary_terminal=now[0])
