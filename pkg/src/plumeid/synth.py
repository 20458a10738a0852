"""Synthetic ground-truth problems: geometry, forward data, noise, sensors.

Everything here is a pure function of (configuration, seed): generating the
same problem twice yields bit-identical fields, which the golden tests and
the CLI determinism contract rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import ModelCoefficients, assemble_source_load, assemble_state_operator
from .grid import ScalarField, StructuredGrid, restrict_full_weighting
from .levelset import LevelSet
from .linalg import make_solver


@dataclass(frozen=True)
class Rectangle:
    x0: float
    x1: float
    y0: float
    y1: float

    def contains(self, points: np.ndarray) -> np.ndarray:
        return (
            (points[:, 0] >= self.x0)
            & (points[:, 0] <= self.x1)
            & (points[:, 1] >= self.y0)
            & (points[:, 1] <= self.y1)
        )


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    r: float

    def contains(self, points: np.ndarray) -> np.ndarray:
        return (points[:, 0] - self.cx) ** 2 + (points[:, 1] - self.cy) ** 2 <= self.r**2


@dataclass(frozen=True)
class InclusionGeometry:
    """Union of primitive shapes marking the active source region."""

    primitives: tuple

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        inside = np.zeros(points.shape[0], dtype=bool)
        for p in self.primitives:
            inside |= p.contains(points)
        return inside


def default_geometry() -> InclusionGeometry:
    """Two-inclusion layout: a rectangle with a circle downstream of it."""
    return InclusionGeometry(
        (Rectangle(0.4, 0.9, 0.25, 0.55), Circle(1.6, 0.65, 0.2))
    )


@dataclass(frozen=True)
class NoiseSpec:
    """Additive nodal Gaussian noise with sigma = level * max|u_ref|."""

    seed: int = 7
    level: float = 0.05

    def __post_init__(self):
        if self.level < 0:
            raise ValueError(f"noise level must be >= 0, got {self.level}")


def indicator_levelset(geom: InclusionGeometry, grid: StructuredGrid) -> LevelSet:
    """Nodal +-0.5 tagging of the geometry; cut cells are resolved by the
    quadrature downstream, not here."""
    inside = geom.contains(grid.node_coords())
    return LevelSet(ScalarField(grid, np.where(inside, 0.5, -0.5)))


def forward_solution(geom: InclusionGeometry, grid: StructuredGrid, coeffs: ModelCoefficients) -> ScalarField:
    """Reference state for the indicator source of the given geometry."""
    solver = make_solver(assemble_state_operator(grid, coeffs))
    load = assemble_source_load(grid, indicator_levelset(geom, grid))
    return ScalarField(grid, solver.solve(load))


def generate_measurements(
    geom: InclusionGeometry,
    grid: StructuredGrid,
    coeffs: ModelCoefficients,
    noise: NoiseSpec = NoiseSpec(),
) -> ScalarField:
    """Reference solution plus seeded i.i.d. nodal Gaussian noise."""
    u_ref = forward_solution(geom, grid, coeffs)
    if noise.level == 0:
        return u_ref
    sigma = noise.level * float(np.abs(u_ref.coeffs).max())
    rng = np.random.default_rng(noise.seed)
    return ScalarField(grid, u_ref.coeffs + rng.normal(0.0, sigma, grid.n_nodes))


@dataclass(frozen=True)
class SensorLayout:
    """k x k equidistant square sensor patches snapped to cell boundaries."""

    rects: tuple
    coverage: float  # actual covered area fraction after snapping

    def cell_mask(self, grid: StructuredGrid) -> np.ndarray:
        from .fem import rectangles_to_cell_mask

        return rectangles_to_cell_mask(grid, [(r.x0, r.x1, r.y0, r.y1) for r in self.rects])


def sensor_mask(k: int, coverage: float, grid: StructuredGrid) -> SensorLayout:
    """Equidistant k x k grid of square patches covering ~`coverage` of the
    domain, each snapped to the nearest cell boundaries.

    Patch j of row i is centered at ((i+1/2) lx/k, (j+1/2) ly/k) with side
    sqrt(coverage * lx * ly) / k before snapping. Overlapping or
    out-of-domain patches (coverage too large for k) are rejected.
    """
    if not 0 < coverage < 1:
        raise ValueError(f"coverage must be in (0, 1), got {coverage}")
    side = float(np.sqrt(coverage * grid.lx * grid.ly) / k)

    def snap(v: float, h: float) -> float:
        return round(v / h) * h

    rects = []
    for i in range(k):
        for j in range(k):
            cx = (i + 0.5) * grid.lx / k
            cy = (j + 0.5) * grid.ly / k
            x0, x1 = snap(cx - side / 2, grid.dx), snap(cx + side / 2, grid.dx)
            y0, y1 = snap(cy - side / 2, grid.dy), snap(cy + side / 2, grid.dy)
            if x1 <= x0 or y1 <= y0:
                raise ValueError(
                    f"sensor patch degenerates after snapping to the {grid.nx}x{grid.ny} grid; "
                    "refine the grid or increase coverage"
                )
            if x0 < -1e-12 or x1 > grid.lx + 1e-12 or y0 < -1e-12 or y1 > grid.ly + 1e-12:
                raise ValueError("sensor patch exceeds the domain")
            rects.append(Rectangle(x0, x1, y0, y1))

    for a in range(len(rects)):
        for b in range(a + 1, len(rects)):
            ra, rb = rects[a], rects[b]
            if ra.x0 < rb.x1 and rb.x0 < ra.x1 and ra.y0 < rb.y1 and rb.y0 < ra.y1:
                raise ValueError("sensor patches overlap after snapping; reduce coverage or k")

    layout = SensorLayout(tuple(rects), 0.0)
    covered = layout.cell_mask(grid).sum() * grid.cell_area
    return SensorLayout(tuple(rects), float(covered / (grid.lx * grid.ly)))


def restrict_measurements(u_bar: ScalarField, coarse: StructuredGrid) -> ScalarField:
    """Full-weighting restriction of fine-grid measurements onto a coarse
    nested grid (the relaxation stage sees this representation)."""
    return restrict_full_weighting(u_bar, coarse)
