"""Proper orthogonal decomposition by the method of snapshots.

Snapshots are columns ``Y[:, j]`` of interior-dof vectors; the inner
product is given by its Gram matrix ``X`` (``None`` for the Euclidean one).
Time-dependent snapshot families are flattened into weighted static
snapshots so that the correlation eigenproblem stays a plain matrix problem.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

RANK_CUTOFF = 1e-12


@dataclass
class PodResult:
    """Descending positive POD spectrum and the first ``rank`` basis vectors."""

    eigenvalues: np.ndarray
    basis: np.ndarray
    rank: int
    zeta: float
    inner_product: str = "h1"
    coefficients: np.ndarray = field(default=None, repr=False)

    @property
    def tail(self) -> float:
        return float(self.eigenvalues[self.rank :].sum())


def _gram_apply(X, Y):
    return Y if X is None else X @ Y


def correlation_matrix(snapshots, gram=None, weights=None, scale=None) -> np.ndarray:
    """K_ij = scale * w_i^{1/2} w_j^{1/2} (y_j, y_i)_X.

    ``scale`` defaults to one over the number of snapshots; ``weights`` are
    optional quadrature weights attached to each column.
    """
    Y = np.asarray(snapshots, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n = Y.shape[1]
    if n < 1:
        raise ValueError("need at least one snapshot")
    if gram is not None and gram.shape[0] != Y.shape[0]:
        raise ValueError(f"inner product acts on {gram.shape[0]} dofs, snapshots have {Y.shape[0]}")
    if not np.any(Y):
        raise ValueError("all snapshots zero")
    if weights is not None:
        Y = Y * np.sqrt(np.asarray(weights, dtype=float))[None, :]
    K = Y.T @ _gram_apply(gram, Y)
    K = 0.5 * (K + K.T)
    return K * (1.0 / n if scale is None else scale)


def pod_basis(
    K,
    snapshots,
    rank: int | None = None,
    zeta: float | None = None,
    weights=None,
    scale: float | None = None,
    inner_product: str = "h1",
) -> PodResult:
    """POD basis phi_k = (scale / lambda_k)^{1/2} sum_j (v_k)_j y_j.

    Exactly one of ``rank`` and ``zeta`` selects the basis size; with
    ``zeta`` the rank is the smallest l whose eigenvalue tail ratio is at
    most ``zeta``.  ``snapshots``, ``weights`` and ``scale`` must be the ones
    K was built from; the scale factor makes the basis X-orthonormal.
    """
    if (rank is None) == (zeta is None):
        raise ValueError("give exactly one of rank and zeta")
    K = np.asarray(K, dtype=float)
    Y = np.asarray(snapshots, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if K.shape != (Y.shape[1], Y.shape[1]):
        raise ValueError(f"correlation matrix is {K.shape} but {Y.shape[1]} snapshots were given")
    if not np.any(K):
        raise ValueError("all snapshots zero")
    lam, V = la.eigh(K)
    lam, V = lam[::-1], V[:, ::-1]
    keep = lam > RANK_CUTOFF * lam[0]
    lam, V = lam[keep], V[:, keep]
    total = lam.sum()
    tails = np.maximum(total - np.cumsum(lam), 0.0)
    if zeta is not None:
        if not 0 < zeta < 1:
            raise ValueError("zeta must lie in (0, 1)")
        rank = int(np.argmax(tails / total <= zeta)) + 1
    if int(rank) != rank or rank < 1:
        raise ValueError(f"rank must be a positive integer, got {rank!r}")
    if rank > lam.size:
        raise ValueError(f"requested rank {rank} exceeds numerical rank {lam.size}")
    if weights is not None:
        Y = Y * np.sqrt(np.asarray(weights, dtype=float))[None, :]
    s = 1.0 / Y.shape[1] if scale is None else scale
    coeffs = V[:, :rank] * np.sqrt(s / lam[:rank])
    signs = _signs(Y @ coeffs)
    return PodResult(
        eigenvalues=lam,
        basis=(Y @ coeffs) * signs,
        rank=int(rank),
        zeta=float(tails[rank - 1] / total),
        inner_product=inner_product,
        coefficients=coeffs * signs,
    )


def _signs(B):
    idx = np.argmax(np.abs(B), axis=0)
    s = np.sign(B[idx, np.arange(B.shape[1])])
    s[s == 0] = 1.0
    return s


def pod(snapshots, gram=None, rank=None, zeta=None, weights=None, scale=None, inner_product="h1") -> PodResult:
    """Correlation matrix and basis in one call."""
    K = correlation_matrix(snapshots, gram, weights, scale=scale)
    return pod_basis(K, snapshots, rank=rank, zeta=zeta, weights=weights, scale=scale, inner_product=inner_product)


def projection_error(snapshots, result: PodResult, gram=None, weights=None, scale=None, rank=None) -> float:
    """scale * sum_j w_j ||y_j - sum_k (y_j, phi_k)_X phi_k||_X^2."""
    Y = np.asarray(snapshots, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n = Y.shape[1]
    rank = result.rank if rank is None else rank
    Phi = result.basis[:, :rank] if rank <= result.basis.shape[1] else None
    if Phi is None:
        raise ValueError("result holds fewer basis vectors than requested rank")
    R = Y - Phi @ (Phi.T @ _gram_apply(gram, Y))
    norms = np.einsum("ij,ij->j", R, _gram_apply(gram, R))
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    return float((1.0 / n if scale is None else scale) * np.sum(w * norms))


def ritz_project(v, result: PodResult, gram=None) -> np.ndarray:
    """Coefficients of the X-orthogonal projection onto an X-orthonormal basis."""
    v = np.asarray(v, dtype=float)
    Phi = result.basis
    if v.shape[0] != Phi.shape[0]:
        raise ValueError(f"vector has {v.shape[0]} dofs, basis has {Phi.shape[0]}")
    return Phi.T @ _gram_apply(gram, v)


def trapezoid_weights(n_samples: int, dt: float) -> np.ndarray:
    w = np.full(n_samples, float(dt))
    if n_samples > 1:
        w[0] = w[-1] = 0.5 * dt
    return w


def build_snapshots(mode: str, inputs, dz: float | None = None, dt: float | None = None, stride: int = 1):
    """Snapshot columns (and per-column weights) for POD.

    ``mode='basis'``: ``inputs`` is a CEM :class:`BasisSet`; its vectors
    (on all fine nodes, restrict before use) are returned unweighted.

    ``mode='trajectory'``: ``inputs`` is a list of K+1 arrays of shape
    (N+1, dofs), layer 0 first.  Emits the 3K+2 families v(t, z_k),
    v_tt(t, z_k) and (v_t(t, z_k) - v_t(t, z_{k-1})) / dz, sampled at
    interior time levels ``1..N-1`` (every ``stride``-th) with trapezoid
    weights.  Returns ``(Y, weights, n_families)``.
    """
    if mode == "basis":
        if inputs is None or len(inputs) == 0:
            raise ValueError("basis mode needs a non-empty CEM basis set")
        return inputs.vectors, None, len(inputs)
    if mode != "trajectory":
        raise ValueError(f"unknown snapshot mode {mode!r}")
    if inputs is None or len(inputs) < 2 or dz is None or dt is None:
        raise ValueError("trajectory mode needs K+1 >= 2 layer trajectories, dz and dt")
    trajs = [np.asarray(t, dtype=float) for t in inputs]
    n_t = trajs[0].shape[0]
    if n_t < 3 or any(t.shape != trajs[0].shape for t in trajs):
        raise ValueError("trajectories must share a shape with at least 3 time levels")
    if not any(np.any(t) for t in trajs):
        raise ValueError("all snapshots zero")
    samples = np.arange(1, n_t - 1)[::stride]
    vel = [(t[2:] - t[:-2]) / (2 * dt) for t in trajs]  # levels 1..N-1
    acc = [(t[2:] - 2 * t[1:-1] + t[:-2]) / dt**2 for t in trajs]
    sel = samples - 1
    families = [t[samples] for t in trajs]
    families += [a[sel] for a in acc]
    families += [(vel[k][sel] - vel[k - 1][sel]) / dz for k in range(1, len(trajs))]
    w_t = trapezoid_weights(len(samples), dt * stride)
    Y = np.concatenate([f.T for f in families], axis=1)
    weights = np.tile(w_t, len(families))
    return Y, weights, len(families)


def orthonormal_span(Y, gram=None, tol: float = RANK_CUTOFF) -> np.ndarray:
    """X-orthonormal basis of span(Y), dropping directions below ``tol`` relative."""
    Y = np.asarray(Y, dtype=float)
    G = Y.T @ _gram_apply(gram, Y)
    lam, V = la.eigh(0.5 * (G + G.T))
    keep = lam > tol * lam.max()
    return Y @ (V[:, keep] / np.sqrt(lam[keep]))
