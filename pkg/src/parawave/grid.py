"""Coarse/fine mesh hierarchy on the unit square.

Fine nodes, fine cells, coarse elements and coarse nodes are all numbered
lexicographically with the x1 index running fastest.  Everything is 0-based.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class GridHierarchy:
    """Uniform Q1 grid of ``n_coarse**2`` coarse squares, each split into
    ``refine**2`` fine squares."""

    n_coarse: int
    refine: int

    def __post_init__(self):
        for name in ("n_coarse", "refine"):
            value = getattr(self, name)
            if int(value) != value or value < 2:
                raise ValueError(f"{name} must be an integer >= 2, got {value!r}")

    # sizes -----------------------------------------------------------------
    @property
    def n_fine(self) -> int:
        """Fine cells per side."""
        return self.n_coarse * self.refine

    @property
    def n_elements(self) -> int:
        return self.n_coarse**2

    @property
    def n_coarse_interior(self) -> int:
        return (self.n_coarse - 1) ** 2

    @property
    def n_cells(self) -> int:
        return self.n_fine**2

    @property
    def n_nodes(self) -> int:
        return (self.n_fine + 1) ** 2

    @property
    def side(self) -> float:
        """Fine cell side length."""
        return 1.0 / self.n_fine

    @property
    def coarse_side(self) -> float:
        return 1.0 / self.n_coarse

    @property
    def H(self) -> float:
        """Coarse mesh size (element diameter)."""
        return np.sqrt(2.0) / self.n_coarse

    @property
    def h(self) -> float:
        return np.sqrt(2.0) / self.n_fine

    # fine nodes ------------------------------------------------------------
    def node_index(self, ix, iy):
        return np.asarray(iy) * (self.n_fine + 1) + np.asarray(ix)

    @cached_property
    def node_ij(self) -> np.ndarray:
        """(n_nodes, 2) integer node coordinates (ix, iy)."""
        n = self.n_fine + 1
        iy, ix = np.divmod(np.arange(n * n), n)
        return np.column_stack([ix, iy])

    @cached_property
    def coords(self) -> np.ndarray:
        return self.node_ij * self.side

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        ij = self.node_ij
        n = self.n_fine
        return (ij[:, 0] == 0) | (ij[:, 0] == n) | (ij[:, 1] == 0) | (ij[:, 1] == n)

    @cached_property
    def interior_dofs(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    @property
    def n_interior(self) -> int:
        return (self.n_fine - 1) ** 2

    def restrict(self, v: np.ndarray) -> np.ndarray:
        """Fine-node vector(s) -> interior-dof vector(s) (first axis)."""
        return np.asarray(v)[self.interior_dofs]

    def extend(self, u: np.ndarray) -> np.ndarray:
        """Interior-dof vector(s) -> fine-node vector(s), zero on the boundary."""
        u = np.asarray(u)
        out = np.zeros((self.n_nodes,) + u.shape[1:], dtype=u.dtype)
        out[self.interior_dofs] = u
        return out

    # fine cells ------------------------------------------------------------
    @cached_property
    def cell_dofs(self) -> np.ndarray:
        """(n_cells, 4) node indices per cell, local order (0,0),(1,0),(0,1),(1,1)."""
        n = self.n_fine
        cy, cx = np.divmod(np.arange(n * n), n)
        base = self.node_index(cx, cy)
        return np.column_stack([base, base + 1, base + n + 1, base + n + 2])

    @cached_property
    def cell_centers(self) -> np.ndarray:
        n = self.n_fine
        cy, cx = np.divmod(np.arange(n * n), n)
        return (np.column_stack([cx, cy]) + 0.5) * self.side

    @cached_property
    def cell_element(self) -> np.ndarray:
        """Coarse element owning each fine cell."""
        n, r = self.n_fine, self.refine
        cy, cx = np.divmod(np.arange(n * n), n)
        return (cy // r) * self.n_coarse + cx // r

    # coarse elements -------------------------------------------------------
    def element_ij(self, i: int) -> tuple[int, int]:
        self._check_element(i)
        ey, ex = divmod(int(i), self.n_coarse)
        return ex, ey

    def _check_element(self, i):
        if int(i) != i or not 0 <= i < self.n_elements:
            raise IndexError(f"element index {i!r} outside [0, {self.n_elements})")

    def box_cells(self, ex0, ex1, ey0, ey1) -> np.ndarray:
        """Fine cells of the coarse-element box [ex0, ex1] x [ey0, ey1] (inclusive)."""
        r, n = self.refine, self.n_fine
        cx = np.arange(ex0 * r, (ex1 + 1) * r)
        cy = np.arange(ey0 * r, (ey1 + 1) * r)
        return (cy[:, None] * n + cx[None, :]).ravel()

    def box_nodes(self, ex0, ex1, ey0, ey1, interior=False) -> np.ndarray:
        r = self.refine
        lo_x, hi_x = ex0 * r, (ex1 + 1) * r
        lo_y, hi_y = ey0 * r, (ey1 + 1) * r
        if interior:
            lo_x, hi_x, lo_y, hi_y = lo_x + 1, hi_x - 1, lo_y + 1, hi_y - 1
        ix = np.arange(lo_x, hi_x + 1)
        iy = np.arange(lo_y, hi_y + 1)
        return self.node_index(ix[None, :], iy[:, None]).ravel()

    def element_cells(self, i: int) -> np.ndarray:
        ex, ey = self.element_ij(i)
        return self.box_cells(ex, ex, ey, ey)

    def element_nodes(self, i: int) -> np.ndarray:
        ex, ey = self.element_ij(i)
        return self.box_nodes(ex, ex, ey, ey)

    # coarse nodes ----------------------------------------------------------
    @property
    def n_coarse_nodes(self) -> int:
        return (self.n_coarse + 1) ** 2

    @cached_property
    def coarse_node_ij(self) -> np.ndarray:
        n = self.n_coarse + 1
        jy, jx = np.divmod(np.arange(n * n), n)
        return np.column_stack([jx, jy])

    @cached_property
    def coarse_interior_nodes(self) -> np.ndarray:
        ij = self.coarse_node_ij
        nc = self.n_coarse
        inner = (ij[:, 0] > 0) & (ij[:, 0] < nc) & (ij[:, 1] > 0) & (ij[:, 1] < nc)
        return np.flatnonzero(inner)

    def coarse_node_fine_index(self, j):
        jx, jy = self.coarse_node_ij[j].T
        return self.node_index(jx * self.refine, jy * self.refine)


@dataclass(frozen=True)
class OversampleRegion:
    """Oversampled patch around one coarse element."""

    center: int
    m: int
    elements: np.ndarray
    cells: np.ndarray
    dofs: np.ndarray
    interior_dofs: np.ndarray
    box: tuple = field(default=(0, 0, 0, 0))


def build_grids(n_coarse: int, refine: int) -> GridHierarchy:
    return GridHierarchy(n_coarse, refine)


def oversample(grid: GridHierarchy, i: int, m: int) -> OversampleRegion:
    """Region K_{i,m}: element ``i`` grown by ``m`` rings of neighbours.

    On a tensor grid every ring of point-neighbours is a box, so the
    recursive definition reduces to a clipped Chebyshev ball of radius m.
    """
    if int(m) != m or m < 0:
        raise ValueError(f"oversampling layers must be a non-negative integer, got {m!r}")
    ex, ey = grid.element_ij(i)
    nc = grid.n_coarse
    ex0, ex1 = max(ex - m, 0), min(ex + m, nc - 1)
    ey0, ey1 = max(ey - m, 0), min(ey + m, nc - 1)
    ebx = np.arange(ex0, ex1 + 1)
    eby = np.arange(ey0, ey1 + 1)
    elements = (eby[:, None] * nc + ebx[None, :]).ravel()
    return OversampleRegion(
        center=int(i),
        m=int(m),
        elements=elements,
        cells=grid.box_cells(ex0, ex1, ey0, ey1),
        dofs=grid.box_nodes(ex0, ex1, ey0, ey1),
        interior_dofs=grid.box_nodes(ex0, ex1, ey0, ey1, interior=True),
        box=(ex0, ex1, ey0, ey1),
    )
