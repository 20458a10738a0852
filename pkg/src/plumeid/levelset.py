"""Level-set representation of the source region and its transport.

Sign convention: phi < 0 outside the inclusion, phi = 0 on the interface,
phi > 0 inside. The relaxed control is rounded into an initial level-set by
an affine range normalization (interface at the mid-range value), and each
shape-optimization step moves the level-set by one implicit Euler step of an
advection-diffusion transport driven by the negative shape gradient. The
small diffusion, scaled to the gradient magnitude, is what lets inclusions
split and merge; the level-set is never reinitialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .fem import assemble_advection_diffusion, assemble_mass
from .grid import ScalarField, StructuredGrid, VectorField
from .linalg import make_solver


class DegenerateControlError(ValueError):
    """The control has no value range, so no interface can be derived."""


@dataclass(frozen=True, eq=False)
class LevelSet:
    """Scalar nodal field whose zero set is the inclusion interface."""

    field: ScalarField

    @property
    def grid(self) -> StructuredGrid:
        return self.field.grid

    def __call__(self, points):
        return self.field(points)

    def inside_cells(self) -> np.ndarray:
        """Boolean per-cell mask: cells with any nodal value > 0."""
        cell_phi = self.field.coeffs[self.grid.cell_node_ids()]
        return (cell_phi > 0).any(axis=1)


@dataclass(frozen=True)
class TransportParams:
    """One implicit Euler transport step per optimization iteration.

    The diffusion coefficient is eps_factor times the largest nodal gradient
    norm, which keeps the smoothing proportional to the remaining descent
    signal instead of drowning it.
    """

    dt: float = 0.3
    eps_factor: float = 1e-2

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"time step must be positive, got {self.dt}")
        if self.eps_factor < 0:
            raise ValueError(f"diffusion factor must be >= 0, got {self.eps_factor}")


def round_to_levelset(f: ScalarField) -> LevelSet:
    """Affine rounding of a control into an initial level-set in [-0.5, 0.5].

    phi = (f - f_min) / (f_max - f_min) - 1/2, so the interface sits at the
    mid-range value of f. A constant control is degenerate and rejected.
    """
    lo, hi = float(f.coeffs.min()), float(f.coeffs.max())
    if not hi > lo:
        raise DegenerateControlError(
            f"control is constant ({lo}); no interface can be derived from it"
        )
    return LevelSet(ScalarField(f.grid, (f.coeffs - lo) / (hi - lo) - 0.5))


def transport_step(
    phi: LevelSet,
    psi: VectorField,
    params: TransportParams,
    eps_override: float | None = None,
) -> LevelSet:
    """One backward-Euler step of the level-set transport along -psi.

    Solves (M + dt K) phi_new = M phi_old where K is the advection-diffusion
    operator with velocity -psi (descent direction), outflow boundary term
    max(0, velocity . n), and diffusion eps = eps_factor * max nodal |psi|
    (or `eps_override` when given, used by tests and derivative oracles).
    """
    grid = phi.grid
    if psi.grid != grid:
        raise ValueError("gradient field lives on a different grid")
    velocity = VectorField.from_arrays(grid, -psi.x.coeffs, -psi.y.coeffs)
    if eps_override is None:
        eps = params.eps_factor * float(psi.nodal_norms().max())
    else:
        eps = float(eps_override)
    mass = assemble_mass(grid)
    transport = assemble_advection_diffusion(grid, eps, velocity)
    system = (mass + params.dt * transport).tocsr()
    solver = make_solver(system, tol=1e-12)
    return LevelSet(ScalarField(grid, solver.solve(mass @ phi.field.coeffs)))


def count_components(phi: LevelSet) -> int:
    """Connected components (4-connectivity) of the positive cell set."""
    grid = phi.grid
    cells = phi.inside_cells().reshape(grid.ny, grid.nx)
    _, n = ndimage.label(cells)
    return int(n)
