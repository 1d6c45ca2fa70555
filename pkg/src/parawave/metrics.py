"""Error and energy diagnostics plus CSV / gnuplot reports."""

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSV_COLUMNS = ("k", "z_k", "e2_k", "E_final_k", "cfl_delta")
UNAVAILABLE = "unavailable"


class ZeroReferenceError(ValueError):
    """The reference has zero L2 norm, so a relative error is undefined."""


def _mnorm2(M, v):
    return float(v @ (M @ v))


def relative_l2_error(lifted, reference, M) -> float:
    """sqrt(d^T M d / r^T M r) with d = lifted - reference."""
    lifted = np.asarray(lifted, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if lifted.shape != reference.shape:
        raise ValueError(f"shapes differ: {lifted.shape} vs {reference.shape}")
    den = _mnorm2(M, reference)
    if not den > 0:
        raise ZeroReferenceError("reference has zero L2 norm")
    d = lifted - reference
    return math.sqrt(max(_mnorm2(M, d), 0.0) / den)


def layer_errors(lifted, reference, M) -> np.ndarray:
    """Row-wise relative errors; NaN where the reference row vanishes."""
    out = np.empty(len(reference))
    for k, (u, r) in enumerate(zip(lifted, reference)):
        try:
            out[k] = relative_l2_error(u, r, M)
        except ZeroReferenceError:
            out[k] = np.nan
    return out


# -- energies -----------------------------------------------------------------


def _states(traj):
    return np.asarray(getattr(traj, "states", traj), dtype=float)


def _quad(P, X, Y=None):
    """Row-wise x_n^T P y_n."""
    Y = X if Y is None else Y
    return np.einsum("ij,ij->i", X, np.asarray((P @ Y.T).T))


def energy_series(traj, ops, dt: float) -> np.ndarray:
    """E_n = ||(v^{n+1} - v^n)/dt||_c^2 + a(v^{n+1}, v^n)/2 for n = 0..N-1.

    ``ops`` needs ``Mc`` and ``A`` acting on the trajectory's coordinates.
    """
    V = _states(traj)
    D = (V[1:] - V[:-1]) / dt
    return _quad(ops.Mc, D) + 0.5 * _quad(ops.A, V[1:], V[:-1])


@dataclass
class StepCheck:
    """Both sides of the per-step energy inequality for n = 1..N-1."""

    lhs: np.ndarray
    rhs: np.ndarray
    energy: np.ndarray
    slack: float = 1e-10

    @property
    def margin(self) -> np.ndarray:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        scale = np.maximum(np.abs(self.lhs), np.abs(self.rhs))
        return bool(np.all(self.lhs <= self.rhs + self.slack * scale))

    @property
    def energy_nonnegative(self) -> bool:
        return bool(np.all(self.energy >= -self.slack * np.abs(self.energy).max(initial=0.0)))


def step_inequality(traj, prev, ops, prev_mass, dt: float, dz: float, slack: float = 1e-10) -> StepCheck:
    """Per-step stability inequality of the leapfrog scheme.

        |v^{n+1} - v^{n-1}|^2 / (4 tau) + E_n
            <= |u^{n+1} - u^{n-1}|^2 / (4 tau) + E_{n-1}

    with u the previous layer.  ``ops.M`` measures the current layer and
    ``prev_mass`` the previous one (the fine mass for prescribed data).
    """
    V, U = _states(traj), _states(prev)
    if V.shape[0] != U.shape[0]:
        raise ValueError("trajectories have different numbers of time levels")
    tau4 = 4.0 * dt * dz
    E = energy_series(V, ops, dt)
    lhs = _quad(ops.M, V[2:] - V[:-2]) / tau4 + E[1:]
    rhs = _quad(prev_mass, U[2:] - U[:-2]) / tau4 + E[:-1]
    return StepCheck(lhs, rhs, E, slack)


def velocity_norm2(traj, mass, dt: float) -> float:
    """sum_{n=1}^{N-1} dt ||(v^{n+1} - v^{n-1}) / (2 dt)||^2."""
    V = _states(traj)
    W = (V[2:] - V[:-2]) / (2.0 * dt)
    return float(dt * _quad(mass, W).sum())


@dataclass
class AggregateCheck:
    lhs: float
    rhs: float
    slack: float = 1e-10

    @property
    def holds(self) -> bool:
        return bool(self.lhs <= self.rhs + self.slack * max(abs(self.lhs), abs(self.rhs)))


def aggregate_stability(trajs, ops, boundary, boundary_mass, dt: float, dz: float, slack: float = 1e-10):
    """Telescoped quasi-time stability over all layers.

        |v_K'|^2_{L2(L2)} + dz sum_k E_{N-1,k} <= |v_0'|^2_{L2(L2)} + dz sum_k E_{0,k}

    Velocities are central differences summed over interior time levels,
    the discrete counterpart for which the bound is exact.
    """
    E = [energy_series(t, o, dt) for t, o in zip(trajs, ops)]
    lhs = velocity_norm2(trajs[-1], ops[-1].M, dt) + dz * sum(e[-1] for e in E)
    rhs = velocity_norm2(boundary, boundary_mass, dt) + dz * sum(e[0] for e in E)
    return AggregateCheck(float(lhs), float(rhs), slack)


# -- reports ------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return UNAVAILABLE
    return "%.17g" % x


def _parse(s: str) -> float:
    return math.nan if s == UNAVAILABLE else float(s)


@dataclass
class ErrorReport:
    """Per-layer errors and final energies with run-level diagnostics.

    Missing errors are NaN in memory and ``unavailable`` on disk.
    """

    k: np.ndarray
    z: np.ndarray
    e2: np.ndarray
    energy_final: np.ndarray
    cfl_delta: float
    pod_eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))
    zeta: float = math.nan
    timings: dict = field(default_factory=dict)

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=int)
        n = len(self.k)
        self.z = np.asarray(self.z, dtype=float)
        self.e2 = np.full(n, np.nan) if self.e2 is None else np.asarray(self.e2, dtype=float)
        self.energy_final = np.asarray(self.energy_final, dtype=float)
        for name in ("z", "e2", "energy_final"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must hold one value per layer")
        if np.any(self.e2 < 0):
            raise ValueError("negative relative error")

    @property
    def has_reference(self) -> bool:
        return bool(np.any(np.isfinite(self.e2)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for k, z, e, E in zip(self.k, self.z, self.e2, self.energy_final):
            w.writerow([str(int(k)), _fmt(float(z)), _fmt(float(e)), _fmt(float(E)), _fmt(float(self.cfl_delta))])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "ErrorReport":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != CSV_COLUMNS:
            raise ValueError(f"expected header {','.join(CSV_COLUMNS)}")
        body = rows[1:]
        cols = list(zip(*body)) if body else [()] * len(CSV_COLUMNS)
        delta = _parse(body[0][4]) if body else math.nan
        return cls(
            k=[int(v) for v in cols[0]],
            z=[_parse(v) for v in cols[1]],
            e2=[_parse(v) for v in cols[2]],
            energy_final=[_parse(v) for v in cols[3]],
            cfl_delta=delta,
        )

    @classmethod
    def read_csv(cls, path) -> "ErrorReport":
        return cls.from_csv(Path(path).read_text())

    def to_gnuplot(self) -> str:
        lines = ["# k e2_k"]
        for k, e in zip(self.k, self.e2):
            lines.append(f"{int(k)} {'NaN' if math.isnan(e) else '%.17g' % e}")
        return "\n".join(lines) + "\n"

    def write_gnuplot(self, path) -> None:
        Path(path).write_text(self.to_gnuplot())
