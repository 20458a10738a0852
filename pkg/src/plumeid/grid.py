"""Structured rectangular grids, nodal fields, and nested-grid transfer.

The mesh covers Omega = [0, lx] x [0, ly] with nx-by-ny axis-aligned
rectangular cells and bilinear nodal basis functions. Nodes are numbered
lexicographically, x-fastest, so node (ix, iy) has index iy*(nx+1) + ix.
Cells use the same convention with index iy*nx + ix; the four nodes of a
cell are ordered (SW, SE, NW, NE).

Grids and fields are immutable after construction: coefficient arrays are
copied in and marked read-only, so shared instances are safe to use from
concurrent callers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse


@dataclass(frozen=True)
class StructuredGrid:
    """Tensor-product mesh of bilinear quadrilateral cells.

    Attributes
    ----------
    lx, ly : float
        Domain extents; Omega = [0, lx] x [0, ly].
    nx, ny : int
        Number of cells per axis.
    level : int
        Refinement level, 0 for the coarsest grid of a hierarchy.
    """

    lx: float
    ly: float
    nx: int
    ny: int
    level: int = 0

    def __post_init__(self):
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError(f"domain extents must be positive, got ({self.lx}, {self.ly})")
        if not (self.nx >= 1 and self.ny >= 1):
            raise ValueError(f"cell counts must be >= 1, got ({self.nx}, {self.ny})")

    @property
    def dx(self) -> float:
        return self.lx / self.nx

    @property
    def dy(self) -> float:
        return self.ly / self.ny

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    def node_coords(self) -> np.ndarray:
        """Coordinates of all nodes, shape (n_nodes, 2), lexicographic x-fastest."""
        x = np.arange(self.nx + 1) * self.dx
        y = np.arange(self.ny + 1) * self.dy
        xx, yy = np.meshgrid(x, y)
        return np.column_stack([xx.ravel(), yy.ravel()])

    def cell_node_ids(self) -> np.ndarray:
        """Node indices per cell, shape (n_cells, 4), ordered (SW, SE, NW, NE)."""
        ix = np.tile(np.arange(self.nx), self.ny)
        iy = np.repeat(np.arange(self.ny), self.nx)
        sw = iy * (self.nx + 1) + ix
        return np.column_stack([sw, sw + 1, sw + self.nx + 1, sw + self.nx + 2])

    def cell_centers(self) -> np.ndarray:
        """Cell midpoints, shape (n_cells, 2)."""
        cx = (np.tile(np.arange(self.nx), self.ny) + 0.5) * self.dx
        cy = (np.repeat(np.arange(self.ny), self.nx) + 0.5) * self.dy
        return np.column_stack([cx, cy])

    def boundary_facets(self) -> list["BoundaryFacet"]:
        """All boundary edges with outward unit normals.

        Each facet is one cell edge lying on the domain boundary, described
        by its two node indices (in increasing coordinate along the edge),
        its length, and the outward normal from {(+-1,0),(0,+-1)}.
        """
        nxp = self.nx + 1
        facets = []
        for ix in range(self.nx):  # bottom, normal (0,-1)
            facets.append(BoundaryFacet((ix, ix + 1), self.dx, (0.0, -1.0)))
        for ix in range(self.nx):  # top, normal (0,+1)
            base = self.ny * nxp
            facets.append(BoundaryFacet((base + ix, base + ix + 1), self.dx, (0.0, 1.0)))
        for iy in range(self.ny):  # left, normal (-1,0)
            facets.append(BoundaryFacet((iy * nxp, (iy + 1) * nxp), self.dy, (-1.0, 0.0)))
        for iy in range(self.ny):  # right, normal (+1,0)
            facets.append(
                BoundaryFacet((iy * nxp + self.nx, (iy + 1) * nxp + self.nx), self.dy, (1.0, 0.0))
            )
        return facets

    def refine(self) -> "StructuredGrid":
        """Factor-2 nested refinement: same extents, doubled cell counts."""
        return StructuredGrid(self.lx, self.ly, 2 * self.nx, 2 * self.ny, self.level + 1)

    def refined(self, times: int) -> "StructuredGrid":
        g = self
        for _ in range(times):
            g = g.refine()
        return g

    def refinement_steps_from(self, coarse: "StructuredGrid") -> int:
        """Number of factor-2 refinements leading from `coarse` to this grid.

        Raises ValueError if this grid is not a (possibly multi-step)
        refinement of `coarse` on the same domain.
        """
        if (coarse.lx, coarse.ly) != (self.lx, self.ly):
            raise ValueError("grids cover different domains")
        rx, ry = self.nx / coarse.nx, self.ny / coarse.ny
        if rx != ry or rx < 1 or rx != 2 ** round(np.log2(rx)):
            raise ValueError(
                f"grid {self.nx}x{self.ny} is not a factor-2 refinement of {coarse.nx}x{coarse.ny}"
            )
        return round(np.log2(rx))

    def locate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Map points to (cell ix, cell iy, local [0,1]^2 coordinates).

        Points must lie in the closed domain; points on upper boundaries are
        assigned to the last cell of the axis.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if np.any(pts[:, 0] < -1e-12) or np.any(pts[:, 0] > self.lx + 1e-12) or np.any(
            pts[:, 1] < -1e-12
        ) or np.any(pts[:, 1] > self.ly + 1e-12):
            raise ValueError("point outside the domain")
        ix = np.clip((pts[:, 0] / self.dx).astype(int), 0, self.nx - 1)
        iy = np.clip((pts[:, 1] / self.dy).astype(int), 0, self.ny - 1)
        xi = pts[:, 0] / self.dx - ix
        eta = pts[:, 1] / self.dy - iy
        return ix, iy, np.column_stack([np.clip(xi, 0.0, 1.0), np.clip(eta, 0.0, 1.0)])


@dataclass(frozen=True)
class BoundaryFacet:
    """One boundary edge: node pair, length, outward unit normal."""

    nodes: tuple[int, int]
    length: float
    normal: tuple[float, float]


def _frozen_array(values, n: int) -> np.ndarray:
    a = np.array(values, dtype=float).reshape(-1).copy()
    if a.size != n:
        raise ValueError(f"expected {n} nodal values, got {a.size}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal coefficients of a bilinear finite element function."""

    grid: StructuredGrid
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _frozen_array(self.coeffs, self.grid.n_nodes))

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """Evaluate by bilinear interpolation at (m, 2) points."""
        g = self.grid
        ix, iy, local = g.locate(points)
        sw = iy * (g.nx + 1) + ix
        c = self.coeffs
        xi, eta = local[:, 0], local[:, 1]
        return (
            c[sw] * (1 - xi) * (1 - eta)
            + c[sw + 1] * xi * (1 - eta)
            + c[sw + g.nx + 1] * (1 - xi) * eta
            + c[sw + g.nx + 2] * xi * eta
        )

    def with_coeffs(self, coeffs) -> "ScalarField":
        return ScalarField(self.grid, coeffs)


@dataclass(frozen=True, eq=False)
class VectorField:
    """d=2 component fields sharing one grid."""

    x: ScalarField
    y: ScalarField

    def __post_init__(self):
        if self.x.grid != self.y.grid:
            raise ValueError("vector field components must share one grid")

    @property
    def grid(self) -> StructuredGrid:
        return self.x.grid

    @property
    def values(self) -> np.ndarray:
        """Nodal values as an (n_nodes, 2) array."""
        return np.column_stack([self.x.coeffs, self.y.coeffs])

    def nodal_norms(self) -> np.ndarray:
        return np.hypot(self.x.coeffs, self.y.coeffs)

    @staticmethod
    def from_arrays(grid: StructuredGrid, vx, vy) -> "VectorField":
        return VectorField(ScalarField(grid, vx), ScalarField(grid, vy))


def build_grid(lx: float, ly: float, nx: int, ny: int) -> StructuredGrid:
    """Construct a level-0 structured grid over [0, lx] x [0, ly]."""
    return StructuredGrid(float(lx), float(ly), int(nx), int(ny))


def refine(grid: StructuredGrid) -> StructuredGrid:
    """Factor-2 nested refinement preserving the domain extents."""
    return grid.refine()


def prolongation_matrix(coarse: StructuredGrid, fine: StructuredGrid) -> sparse.csr_matrix:
    """Sparse bilinear interpolation operator from coarse to fine nodes.

    Exact injection at shared nodes, edge/cell midpoint averaging elsewhere;
    multi-step nesting is handled by composing one-level operators.
    """
    steps = fine.refinement_steps_from(coarse)
    op = sparse.identity(coarse.n_nodes, format="csr")
    g = coarse
    for _ in range(steps):
        op = _one_level_prolongation(g) @ op
        g = g.refine()
    return op.tocsr()


def _one_level_prolongation(coarse: StructuredGrid) -> sparse.csr_matrix:
    nx, ny = coarse.nx, coarse.ny
    fnx, fny = 2 * nx, 2 * ny

    def cid(ix, iy):
        return iy * (nx + 1) + ix

    def fid(ix, iy):
        return iy * (fnx + 1) + ix

    rows, cols, vals = [], [], []
    fix = np.arange(fnx + 1)
    fiy = np.arange(fny + 1)
    gx, gy = np.meshgrid(fix, fiy)
    gx, gy = gx.ravel(), gy.ravel()
    ex, ey = gx % 2 == 0, gy % 2 == 0

    both = ex & ey
    rows.append(fid(gx[both], gy[both]))
    cols.append(cid(gx[both] // 2, gy[both] // 2))
    vals.append(np.full(both.sum(), 1.0))

    mx = (~ex) & ey  # x-midpoints
    for shift in (0, 1):
        rows.append(fid(gx[mx], gy[mx]))
        cols.append(cid(gx[mx] // 2 + shift, gy[mx] // 2))
        vals.append(np.full(mx.sum(), 0.5))

    my = ex & (~ey)  # y-midpoints
    for shift in (0, 1):
        rows.append(fid(gx[my], gy[my]))
        cols.append(cid(gx[my] // 2, gy[my] // 2 + shift))
        vals.append(np.full(my.sum(), 0.5))

    mc = (~ex) & (~ey)  # cell centers
    for sx in (0, 1):
        for sy in (0, 1):
            rows.append(fid(gx[mc], gy[mc]))
            cols.append(cid(gx[mc] // 2 + sx, gy[mc] // 2 + sy))
            vals.append(np.full(mc.sum(), 0.25))

    fine_n = (fnx + 1) * (fny + 1)
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(fine_n, coarse.n_nodes),
    )


def prolongate(field: ScalarField, fine: StructuredGrid) -> ScalarField:
    """Interpolate a coarse-grid field onto a nested finer grid.

    Output nodal values equal bilinear evaluation of the input at the fine
    node coordinates; values at shared nodes are copied exactly.
    """
    op = prolongation_matrix(field.grid, fine)
    return ScalarField(fine, op @ field.coeffs)


def _restrict_1d(n_coarse_cells: int) -> sparse.csr_matrix:
    nc = n_coarse_cells + 1
    rows, cols, vals = [], [], []
    for i in range(nc):
        if i == 0 or i == nc - 1:
            rows.append(i), cols.append(2 * i), vals.append(1.0)
        else:
            rows.extend([i, i, i])
            cols.extend([2 * i - 1, 2 * i, 2 * i + 1])
            vals.extend([0.25, 0.5, 0.25])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(nc, 2 * n_coarse_cells + 1))


def restriction_matrix(coarse: StructuredGrid, fine: StructuredGrid) -> sparse.csr_matrix:
    """Full-weighting restriction: tensor product of 1D (1/4, 1/2, 1/4)
    stencils (the row-normalized transpose of the prolongation) with
    injection at boundary nodes, so constants and linears are reproduced
    exactly everywhere."""
    steps = fine.refinement_steps_from(coarse)
    op = sparse.identity(fine.n_nodes, format="csr")
    g = fine
    for _ in range(steps):
        parent = StructuredGrid(g.lx, g.ly, g.nx // 2, g.ny // 2, g.level - 1)
        level_op = sparse.kron(_restrict_1d(parent.ny), _restrict_1d(parent.nx), format="csr")
        op = level_op @ op
        g = parent
    return op.tocsr()


def restrict_full_weighting(field: ScalarField, coarse: StructuredGrid) -> ScalarField:
    """Full-weighting restriction of a fine field onto a coarser nested grid."""
    return ScalarField(coarse, restriction_matrix(coarse, field.grid) @ field.coeffs)
