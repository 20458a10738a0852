"""Element integration and global assembly on structured quad grids.

Assembles every bilinear/linear form the solver needs: mass, measurement
mass (restricted to sensor cells), the advection-diffusion form

    a(u, w) = int_Omega  c grad(u).grad(w) - u b.grad(w) dx
            + int_bnd    max(0, b.n) u w ds

with either a constant velocity or a nodal vector field, the indicator
source load driven by a level-set sign, and the cut-cell quadrature
selection (low order on sign-uniform cells, high order where the nodal
values change sign).

All uncut-cell integrals use 2x2 Gauss-Legendre, which is exact for the
bilinear forms with constant coefficients on axis-aligned rectangles.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse

from .grid import ScalarField, StructuredGrid, VectorField

LOW_QUADRATURE_ORDER = 2
HIGH_QUADRATURE_ORDER = 8

# Points per boundary edge; resolves the kink of max(0, v.n) reasonably
# when the nodal velocity changes sign along an edge.
EDGE_QUADRATURE_ORDER = 4


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Tensor Gauss-Legendre rule on the reference cell [0,1]^2."""

    order: int  # points per axis
    points: np.ndarray  # (m, 2)
    weights: np.ndarray  # (m,), positive, sums to 1


@lru_cache(maxsize=None)
def gauss_legendre_1d(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on [0, 1]; weights sum to 1."""
    x, w = np.polynomial.legendre.leggauss(order)
    return (x + 1.0) / 2.0, w / 2.0


@lru_cache(maxsize=None)
def tensor_rule(order: int) -> QuadratureRule:
    x, w = gauss_legendre_1d(order)
    xx, yy = np.meshgrid(x, x)
    ww = np.outer(w, w)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    pts.setflags(write=False)
    wts = ww.ravel()
    wts.setflags(write=False)
    return QuadratureRule(order, pts, wts)


def select_quadrature(cell_nodal_phi) -> QuadratureRule:
    """Quadrature rule for one cell from its four nodal level-set values.

    A strict sign change (min*max < 0) marks a cut cell and selects the
    high-order rule; ties at exactly zero count as uncut.
    """
    v = np.asarray(cell_nodal_phi, dtype=float)
    if v.min() * v.max() < 0:
        return tensor_rule(HIGH_QUADRATURE_ORDER)
    return tensor_rule(LOW_QUADRATURE_ORDER)


def basis_values(points: np.ndarray) -> np.ndarray:
    """Bilinear basis (SW, SE, NW, NE) at reference points, shape (m, 4)."""
    x, y = points[:, 0], points[:, 1]
    return np.column_stack([(1 - x) * (1 - y), x * (1 - y), (1 - x) * y, x * y])


def basis_gradients(points: np.ndarray, dx: float, dy: float) -> tuple[np.ndarray, np.ndarray]:
    """Physical-space basis gradients at reference points: (dN/dx, dN/dy)."""
    x, y = points[:, 0], points[:, 1]
    gx = np.column_stack([-(1 - y), 1 - y, -y, y]) / dx
    gy = np.column_stack([-(1 - x), -x, 1 - x, x]) / dy
    return gx, gy


@dataclass(frozen=True)
class ModelCoefficients:
    """Constant diffusivity and velocity of the flow model; div(b) = 0 holds
    automatically for constant b."""

    c: float
    b: tuple[float, float]

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"diffusivity must be positive, got {self.c}")
        if not np.all(np.isfinite(self.b)):
            raise ValueError(f"velocity must be finite, got {self.b}")


def _nodal_values(f) -> np.ndarray:
    """Nodal coefficients of a ScalarField or of a LevelSet-like wrapper."""
    if hasattr(f, "coeffs"):
        return f.coeffs
    return f.field.coeffs


def _scatter_cells(grid: StructuredGrid, local: np.ndarray, cell_ids=None) -> sparse.csr_matrix:
    """Accumulate per-cell 4x4 blocks into the global sparse operator."""
    cn = grid.cell_node_ids() if cell_ids is None else cell_ids
    if local.ndim == 2:
        local = np.broadcast_to(local, (cn.shape[0],) + local.shape)
    rows = np.broadcast_to(cn[:, :, None], local.shape).ravel()
    cols = np.broadcast_to(cn[:, None, :], local.shape).ravel()
    mat = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(grid.n_nodes, grid.n_nodes))
    return mat.tocsr()


def _local_mass(grid: StructuredGrid) -> np.ndarray:
    rule = tensor_rule(LOW_QUADRATURE_ORDER)
    n = basis_values(rule.points)
    return grid.cell_area * np.einsum("q,qi,qj->ij", rule.weights, n, n)


def _local_stiffness(grid: StructuredGrid) -> np.ndarray:
    rule = tensor_rule(LOW_QUADRATURE_ORDER)
    gx, gy = basis_gradients(rule.points, grid.dx, grid.dy)
    return grid.cell_area * (
        np.einsum("q,qi,qj->ij", rule.weights, gx, gx)
        + np.einsum("q,qi,qj->ij", rule.weights, gy, gy)
    )


def assemble_mass(grid: StructuredGrid) -> sparse.csr_matrix:
    """Mass operator M_ij = int phi_i phi_j dx; symmetric positive definite."""
    return _scatter_cells(grid, _local_mass(grid))


def assemble_stiffness(grid: StructuredGrid) -> sparse.csr_matrix:
    """Pure-Neumann stiffness K_ij = int grad(phi_i).grad(phi_j) dx."""
    return _scatter_cells(grid, _local_stiffness(grid))


def rectangles_to_cell_mask(grid: StructuredGrid, rects) -> np.ndarray:
    """Boolean per-cell mask of cells whose center lies in any closed
    rectangle (x0, x1, y0, y1)."""
    centers = grid.cell_centers()
    mask = np.zeros(grid.n_cells, dtype=bool)
    for x0, x1, y0, y1 in rects:
        mask |= (
            (centers[:, 0] >= x0)
            & (centers[:, 0] <= x1)
            & (centers[:, 1] >= y0)
            & (centers[:, 1] <= y1)
        )
    return mask


def assemble_measurement_mass(grid: StructuredGrid, cell_mask=None) -> sparse.csr_matrix:
    """Measurement mass over the sensor region: int_{Omega_m} phi_i phi_j dx.

    `cell_mask` is a boolean array over cells (sensor rectangles are snapped
    to cell boundaries upstream) or None for full observation, in which case
    the result equals the full mass operator.
    """
    if cell_mask is None:
        return assemble_mass(grid)
    cell_mask = np.asarray(cell_mask, dtype=bool)
    if cell_mask.shape != (grid.n_cells,):
        raise ValueError(f"cell mask must have shape ({grid.n_cells},)")
    if not cell_mask.any():
        raise ValueError("empty measurement region: the misfit would be constant")
    cn = grid.cell_node_ids()[cell_mask]
    return _scatter_cells(grid, np.broadcast_to(_local_mass(grid), (cn.shape[0], 4, 4)), cn)


def _edge_rule() -> tuple[np.ndarray, np.ndarray]:
    return gauss_legendre_1d(EDGE_QUADRATURE_ORDER)


def _boundary_outflow(grid: StructuredGrid, velocity) -> sparse.csr_matrix:
    """Robin boundary operator int_bnd max(0, v.n) phi_j phi_i ds.

    `velocity` is a constant (vx, vy) pair or a VectorField; a nodal field is
    linear along each boundary edge and is evaluated at edge quadrature
    points before the max is applied.
    """
    facets = grid.boundary_facets()
    n0 = np.array([f.nodes[0] for f in facets])
    n1 = np.array([f.nodes[1] for f in facets])
    lengths = np.array([f.length for f in facets])
    normals = np.array([f.normal for f in facets])

    s, w = _edge_rule()
    sh = np.column_stack([1 - s, s])  # (q, 2)
    if isinstance(velocity, VectorField):
        vals = velocity.values
        v_q = sh[None, :, :, None] * np.stack([vals[n0], vals[n1]], axis=1)[:, None, :, :]
        v_q = v_q.sum(axis=2)  # (facets, q, 2)
        g = np.maximum(0.0, np.einsum("fqd,fd->fq", v_q, normals))
    else:
        vx, vy = velocity
        g = np.maximum(0.0, normals @ np.array([vx, vy]))[:, None] * np.ones_like(s)

    # local[f, i, j] = length_f * sum_q w_q g[f,q] sh_i(q) sh_j(q)
    local = np.einsum("fq,q,qi,qj->fij", g, w, sh, sh) * lengths[:, None, None]
    pairs = np.column_stack([n0, n1])
    rows = np.broadcast_to(pairs[:, :, None], local.shape).ravel()
    cols = np.broadcast_to(pairs[:, None, :], local.shape).ravel()
    mat = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(grid.n_nodes, grid.n_nodes))
    return mat.tocsr()


def assemble_advection_diffusion(grid: StructuredGrid, diffusivity: float, velocity) -> sparse.csr_matrix:
    """Operator of the advection-diffusion form with outflow boundary term.

    A_ij = int diffusivity grad(phi_j).grad(phi_i) - phi_j v.grad(phi_i) dx
         + int_bnd max(0, v.n) phi_j phi_i ds

    with trial index j and test index i. `velocity` is a constant (vx, vy)
    or a VectorField on the same grid.
    """
    rule = tensor_rule(LOW_QUADRATURE_ORDER)
    n = basis_values(rule.points)
    gx, gy = basis_gradients(rule.points, grid.dx, grid.dy)
    area = grid.cell_area

    if isinstance(velocity, VectorField):
        if velocity.grid != grid:
            raise ValueError("velocity field lives on a different grid")
        cn = grid.cell_node_ids()
        vx_q = velocity.x.coeffs[cn] @ n.T  # (cells, q)
        vy_q = velocity.y.coeffs[cn] @ n.T
        adv = np.einsum("q,cq,qi,qj->cij", rule.weights, vx_q, gx, n) + np.einsum(
            "q,cq,qi,qj->cij", rule.weights, vy_q, gy, n
        )
        local = diffusivity * _local_stiffness(grid)[None, :, :] - area * adv
    else:
        vx, vy = velocity
        adv = np.einsum("q,qi,qj->ij", rule.weights, vx * gx + vy * gy, n)
        local = diffusivity * _local_stiffness(grid) - area * adv

    return _scatter_cells(grid, local) + _boundary_outflow(grid, velocity)


def cell_peclet(grid: StructuredGrid, coeffs: ModelCoefficients) -> float:
    return max(abs(coeffs.b[0]) * grid.dx, abs(coeffs.b[1]) * grid.dy) / coeffs.c


def assemble_state_operator(grid: StructuredGrid, coeffs: ModelCoefficients) -> sparse.csr_matrix:
    """Discrete state operator S of the stationary flow model (nonsymmetric).

    Plain Galerkin without stabilization; configurations with cell Peclet
    number above 2 trigger a warning.
    """
    if cell_peclet(grid, coeffs) > 2:
        warnings.warn(
            f"cell Peclet number {cell_peclet(grid, coeffs):.3g} exceeds 2; "
            "the unstabilized advection discretization may oscillate",
            stacklevel=2,
        )
    return assemble_advection_diffusion(grid, coeffs.c, coeffs.b)


def assemble_adjoint_operator(grid: StructuredGrid, coeffs: ModelCoefficients) -> sparse.csr_matrix:
    """Adjoint operator: the transpose of the state operator.

    For constant (divergence-free) velocity this equals reassembling the
    state form with the reversed velocity and outflow max(0, -b.n); that
    identity is exercised in tests rather than assumed here.
    """
    return assemble_state_operator(grid, coeffs).T.tocsr()


def assemble_source_load(grid: StructuredGrid, phi, weight=None) -> np.ndarray:
    """Load vector l_i = int chi{phi > 0} w phi_i dx with cut-cell quadrature.

    The indicator is evaluated from the bilinear interpolant of the nodal
    level-set values at each quadrature point (strictly positive test); cells
    whose nodal values change sign get the high-order rule. With `weight`
    given (a ScalarField), integrates chi{phi > 0} * weight * phi_i instead.
    """
    pv = _nodal_values(phi)
    cn = grid.cell_node_ids()
    cell_phi = pv[cn]
    cut = cell_phi.min(axis=1) * cell_phi.max(axis=1) < 0
    out = np.zeros(grid.n_nodes)
    for order, group in ((LOW_QUADRATURE_ORDER, ~cut), (HIGH_QUADRATURE_ORDER, cut)):
        if not group.any():
            continue
        rule = tensor_rule(order)
        n = basis_values(rule.points)
        phi_q = cell_phi[group] @ n.T
        integrand = (phi_q > 0).astype(float)
        if weight is not None:
            integrand = integrand * (_nodal_values(weight)[cn[group]] @ n.T)
        contrib = grid.cell_area * ((integrand * rule.weights) @ n)
        np.add.at(out, cn[group].ravel(), contrib.ravel())
    return out


def assemble_relaxed_load(grid: StructuredGrid, f: ScalarField) -> np.ndarray:
    """Volumetric load M f assembled cellwise (no global mass operator)."""
    fv = _nodal_values(f)
    cn = grid.cell_node_ids()
    contrib = fv[cn] @ _local_mass(grid)
    out = np.zeros(grid.n_nodes)
    np.add.at(out, cn.ravel(), contrib.ravel())
    return out
