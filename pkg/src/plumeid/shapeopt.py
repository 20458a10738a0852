"""Level-set shape optimization of the binary source region.

Descent loop on J(Omega) = 1/2 int_{Omega_m} (u - u_bar)^2 dx where u solves
the flow model with the indicator source chi{phi > 0}. The derivative with
respect to a deformation field v is assembled in pure volume form: the
deformation moves only the source support while the sensor region and the
measured data stay fixed in space, which gives

    dJ[v] = int  -chi_m (u - u_bar) v.grad(u)
                 - c grad(u)^T (Dv + Dv^T) grad(w) + u b^T Dv^T grad(w)
                 + div(v) [ c grad(u).grad(w) - u b.grad(w) - f w ]  dx

with w the adjoint state and Dv the Jacobian of v. For exact solutions this
collapses to -int f div(w v) dx (verified under refinement in tests); both
writings are volumetric, so the interface is never reconstructed
geometrically and the cut-cell quadrature decides cellwise. The gradient
representation psi solves the H1-type metric a2(p, q) = (1-alpha) int sum_i
grad(p_i).grad(q_i) + alpha int sum_i p_i q_i without boundary conditions,
and the level-set is transported along -psi.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .fem import (
    HIGH_QUADRATURE_ORDER,
    LOW_QUADRATURE_ORDER,
    ModelCoefficients,
    assemble_mass,
    assemble_measurement_mass,
    assemble_source_load,
    assemble_state_operator,
    assemble_stiffness,
    basis_gradients,
    basis_values,
    tensor_rule,
)
from .grid import ScalarField, StructuredGrid, VectorField
from .levelset import LevelSet, TransportParams, count_components, transport_step
from .linalg import make_solver


@dataclass(frozen=True)
class ShapeGradientParams:
    """Metric blend, stopping tolerance on ||psi||_L2, and iteration cap."""

    alpha: float = 3e-1
    eps_psi: float = 1e-4
    max_iters: int = 600
    halve_dt_on_increase: bool = False

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"metric blend alpha must be in (0, 1), got {self.alpha}")
        if not self.eps_psi > 0:
            raise ValueError(f"stopping tolerance must be positive, got {self.eps_psi}")


def solve_state_shape(grid, coeffs, phi: LevelSet, solver=None) -> ScalarField:
    """State solve with the level-set indicator source."""
    if solver is None:
        solver = make_solver(assemble_state_operator(grid, coeffs))
    return ScalarField(grid, solver.solve(assemble_source_load(grid, phi)))


def solve_adjoint_shape(grid, coeffs, u: ScalarField, u_bar: ScalarField, cell_mask=None, solver=None) -> ScalarField:
    """Adjoint solve S^T w = -Mt (u - u_bar)."""
    if solver is None:
        solver = make_solver(assemble_state_operator(grid, coeffs))
    m_meas = assemble_measurement_mass(grid, cell_mask)
    return ScalarField(grid, solver.solve_transpose(-(m_meas @ (u.coeffs - u_bar.coeffs))))


def assemble_shape_derivative(
    grid: StructuredGrid,
    coeffs: ModelCoefficients,
    u: ScalarField,
    w: ScalarField,
    phi: LevelSet,
    u_bar: ScalarField,
    cell_mask=None,
) -> np.ndarray:
    """Volume-form shape derivative as a functional over (V_h)^2.

    Returns a vector of length 2n: entry i is dJ[phi_i e_x], entry n+i is
    dJ[phi_i e_y]. The cut-cell rule applies to every term in cells where the
    level-set changes sign (one quadrature decision per cell); the
    measurement indicator is cellwise constant because sensor patches are
    snapped to cell boundaries.
    """
    n = grid.n_nodes
    cn = grid.cell_node_ids()
    if cell_mask is None:
        chi_cells = np.ones(grid.n_cells)
    else:
        chi_cells = np.asarray(cell_mask, dtype=float)
    pv = phi.field.coeffs
    cell_phi = pv[cn]
    cut = cell_phi.min(axis=1) * cell_phi.max(axis=1) < 0
    bx, by = coeffs.b
    area = grid.cell_area

    out = np.zeros(2 * n)
    for order, group in ((LOW_QUADRATURE_ORDER, ~cut), (HIGH_QUADRATURE_ORDER, cut)):
        if not group.any():
            continue
        rule = tensor_rule(order)
        nq = basis_values(rule.points)
        gx, gy = basis_gradients(rule.points, grid.dx, grid.dy)
        ids = cn[group]

        uu, ww_, bb = u.coeffs[ids], w.coeffs[ids], u_bar.coeffs[ids]
        u_q = uu @ nq.T
        w_q = ww_ @ nq.T
        ubar_q = bb @ nq.T
        phi_q = cell_phi[group] @ nq.T
        ux, uy = uu @ gx.T, uu @ gy.T
        wx, wy = ww_ @ gx.T, ww_ @ gy.T
        f_q = (phi_q > 0).astype(float)
        misfit = -chi_cells[group][:, None] * (u_q - ubar_q)

        bulk = coeffs.c * (ux * wx + uy * wy) - u_q * (bx * wx + by * wy) - f_q * w_q

        grad_w_dot = np.einsum("qi,cq->cqi", gx, wx) + np.einsum("qi,cq->cqi", gy, wy)
        grad_u_dot = np.einsum("qi,cq->cqi", gx, ux) + np.einsum("qi,cq->cqi", gy, uy)
        b_dot = bx * gx + by * gy  # (q, i)

        contrib_x = (
            (misfit * ux)[:, :, None] * nq[None, :, :]
            - coeffs.c * (ux[:, :, None] * grad_w_dot + grad_u_dot * wx[:, :, None])
            + u_q[:, :, None] * b_dot[None, :, :] * wx[:, :, None]
            + gx[None, :, :] * bulk[:, :, None]
        )
        contrib_y = (
            (misfit * uy)[:, :, None] * nq[None, :, :]
            - coeffs.c * (uy[:, :, None] * grad_w_dot + grad_u_dot * wy[:, :, None])
            + u_q[:, :, None] * b_dot[None, :, :] * wy[:, :, None]
            + gy[None, :, :] * bulk[:, :, None]
        )
        djx = area * np.einsum("q,cqi->ci", rule.weights, contrib_x)
        djy = area * np.einsum("q,cqi->ci", rule.weights, contrib_y)
        np.add.at(out[:n], ids.ravel(), djx.ravel())
        np.add.at(out[n:], ids.ravel(), djy.ravel())
    return out


class GradientMetric:
    """Factorized a2 operator (1-alpha) K + alpha M, shared by both vector
    components; symmetric positive definite for alpha in (0, 1)."""

    def __init__(self, grid: StructuredGrid, alpha: float):
        self.grid = grid
        self.alpha = float(alpha)
        self.mass = assemble_mass(grid)
        self.block = ((1.0 - alpha) * assemble_stiffness(grid) + alpha * self.mass).tocsr()
        self.solver = make_solver(self.block, tol=1e-12)

    def represent(self, dj: np.ndarray) -> VectorField:
        n = self.grid.n_nodes
        return VectorField.from_arrays(self.grid, self.solver.solve(dj[:n]), self.solver.solve(dj[n:]))

    def l2_norm(self, psi: VectorField) -> float:
        vx, vy = psi.x.coeffs, psi.y.coeffs
        return float(np.sqrt(vx @ (self.mass @ vx) + vy @ (self.mass @ vy)))


def gradient_representation(grid: StructuredGrid, dj: np.ndarray, alpha: float) -> VectorField:
    """Riesz representative of dJ in the H1-type metric (no boundary
    conditions imposed)."""
    return GradientMetric(grid, alpha).represent(dj)


@dataclass
class ShapeIterationRecord:
    iteration: int
    objective: float
    misfit_norm: float
    psi_norm: float
    components: int
    pde_solves: int


@dataclass
class ShapeResult:
    phi: LevelSet
    converged: bool
    iterations: int
    history: list[ShapeIterationRecord] = field(repr=False)


def shape_descent_loop(
    grid: StructuredGrid,
    coeffs: ModelCoefficients,
    phi0: LevelSet,
    u_bar: ScalarField,
    cell_mask=None,
    params: ShapeGradientParams = ShapeGradientParams(),
    transport: TransportParams = TransportParams(),
    on_iteration=None,
) -> ShapeResult:
    """Gradient descent on the shape problem until ||psi||_L2 <= eps_psi.

    One state solve, one adjoint solve, one gradient representation and one
    transport step per iteration, at fixed dt (no line search). If the cap
    is hit, the best (lowest objective) iterate is returned non-converged.
    `on_iteration(phi, record)` is called once per iteration when given.
    """
    solver = make_solver(assemble_state_operator(grid, coeffs), tol=1e-12)
    m_meas = assemble_measurement_mass(grid, cell_mask)
    metric = GradientMetric(grid, params.alpha)
    dt = transport.dt

    phi = phi0
    history: list[ShapeIterationRecord] = []
    best_phi, best_objective = phi0, np.inf
    for k in range(params.max_iters + 1):
        u = ScalarField(grid, solver.solve(assemble_source_load(grid, phi)))
        r = u.coeffs - u_bar.coeffs
        objective = 0.5 * float(r @ (m_meas @ r))
        w = ScalarField(grid, solver.solve_transpose(-(m_meas @ r)))
        dj = assemble_shape_derivative(grid, coeffs, u, w, phi, u_bar, cell_mask)
        psi = metric.represent(dj)
        psi_norm = metric.l2_norm(psi)

        record = ShapeIterationRecord(
            iteration=k,
            objective=objective,
            misfit_norm=float(np.sqrt(2.0 * objective)),
            psi_norm=psi_norm,
            components=count_components(phi),
            pde_solves=solver.solve_count,
        )
        history.append(record)
        if on_iteration is not None:
            on_iteration(phi, record)

        if objective < best_objective:
            best_phi, best_objective = phi, objective
        if psi_norm <= params.eps_psi:
            return ShapeResult(phi=phi, converged=True, iterations=k, history=history)
        if k == params.max_iters:
            break
        if len(history) >= 2 and objective > history[-2].objective:
            warnings.warn(
                f"objective increased at shape iteration {k} "
                f"({history[-2].objective:.6e} -> {objective:.6e}); fixed-step descent",
                stacklevel=2,
            )
            if params.halve_dt_on_increase:
                dt = dt / 2.0
        phi = transport_step(phi, psi, TransportParams(dt, transport.eps_factor))

    return ShapeResult(phi=best_phi, converged=False, iterations=params.max_iters, history=history)
