"""End-to-end orchestration of the two-stage identification algorithm.

Stage 1 solves the relaxed control problem on the coarse grid and rounds the
minimizer into an initial level-set; the level-set is interpolated to the
fine grid and stage 2 runs the shape-optimization descent there. Both the
CLI and the estimator facade drive this module, so their results agree.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .config import ProblemConfig, parse_geometry, parse_sensors
from .fem import ModelCoefficients
from .grid import ScalarField, StructuredGrid, prolongate
from .levelset import LevelSet, TransportParams, round_to_levelset
from .linalg import SolverError
from .metrics import RecoveryReport, compare_levelsets
from .relax import ReducedProblem, RelaxResult, solve_relaxed
from .shapeopt import ShapeGradientParams, ShapeResult, shape_descent_loop
from .synth import (
    NoiseSpec,
    SensorLayout,
    generate_measurements,
    indicator_levelset,
    restrict_measurements,
    sensor_mask,
)


def grids_from_config(config: ProblemConfig) -> tuple[StructuredGrid, StructuredGrid]:
    base = StructuredGrid(config.grid.lx, config.grid.ly, config.grid.nx, config.grid.ny)
    return base.refined(config.grid.relax_level), base.refined(config.grid.shape_level)


def model_from_config(config: ProblemConfig) -> ModelCoefficients:
    return ModelCoefficients(config.model.c, (config.model.bx, config.model.by))


def sensors_from_config(config: ProblemConfig, relax_grid: StructuredGrid) -> SensorLayout | None:
    spec = parse_sensors(config.data.sensors)
    if spec is None:
        return None
    # Snapping happens on the coarse grid; its cell boundaries persist on
    # every nested refinement, so the patches stay cell-aligned everywhere.
    return sensor_mask(spec["k"], spec["coverage"], relax_grid)


@dataclass
class GeneratedProblem:
    truth: LevelSet
    measurements: ScalarField
    layout: SensorLayout | None


def generate_problem(config: ProblemConfig) -> GeneratedProblem:
    """Truth level-set and (noisy) measurements on the shape-stage grid."""
    relax_grid, shape_grid = grids_from_config(config)
    geom = parse_geometry(config.data.geometry)
    coeffs = model_from_config(config)
    noise = NoiseSpec(config.data.noise_seed, config.data.noise_level)
    return GeneratedProblem(
        truth=indicator_levelset(geom, shape_grid),
        measurements=generate_measurements(geom, shape_grid, coeffs, noise),
        layout=sensors_from_config(config, relax_grid),
    )


@dataclass
class PipelineResult:
    config: ProblemConfig
    relax_grid: StructuredGrid
    shape_grid: StructuredGrid
    measurements: ScalarField
    layout: SensorLayout | None
    truth: LevelSet | None = None
    relax_result: RelaxResult | None = None
    phi0_coarse: LevelSet | None = None
    phi0: LevelSet | None = None
    shape_result: ShapeResult | None = None
    report: RecoveryReport | None = None
    failed_stage: str | None = None
    failure_message: str = ""
    wall_times: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return (
            self.failed_stage is None
            and self.shape_result is not None
            and self.relax_result is not None
            and self.relax_result.converged
        )


def run_pipeline(
    config: ProblemConfig,
    measurements: ScalarField | None = None,
    layout: SensorLayout | None = None,
    truth: LevelSet | None = None,
    on_shape_iteration=None,
) -> PipelineResult:
    """Execute relax -> round -> interpolate -> shape per the configuration.

    With `measurements` omitted, the synthetic problem of the config is
    generated inline (deterministic in the seed) and the recovered set is
    scored against the truth. Stage failures are tagged on the result
    instead of propagating, so callers can persist partial records.
    """
    relax_grid, shape_grid = grids_from_config(config)
    coeffs = model_from_config(config)

    if measurements is None:
        generated = generate_problem(config)
        measurements, layout, truth = generated.measurements, generated.layout, generated.truth
    elif measurements.grid != shape_grid:
        raise ValueError("measurements must live on the shape-stage grid")

    result = PipelineResult(
        config=config,
        relax_grid=relax_grid,
        shape_grid=shape_grid,
        measurements=measurements,
        layout=layout,
        truth=truth,
    )

    u_bar_coarse = (
        measurements
        if relax_grid == shape_grid
        else restrict_measurements(measurements, relax_grid)
    )
    coarse_mask = None if layout is None else layout.cell_mask(relax_grid)
    fine_mask = None if layout is None else layout.cell_mask(shape_grid)

    t0 = time.perf_counter()
    try:
        problem = ReducedProblem(
            relax_grid, coeffs, u_bar_coarse, mu=config.relax.mu, cell_mask=coarse_mask
        )
        result.relax_result = solve_relaxed(
            problem,
            eps_newton=config.relax.eps_newton,
            gamma=config.relax.gamma,
            max_iter=config.relax.max_newton,
        )
    except SolverError as exc:
        result.failed_stage = "relax"
        result.failure_message = str(exc)
        return result
    result.wall_times["relax"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        result.phi0_coarse = round_to_levelset(result.relax_result.f)
        result.phi0 = (
            result.phi0_coarse
            if relax_grid == shape_grid
            else LevelSet(prolongate(result.phi0_coarse.field, shape_grid))
        )
    except ValueError as exc:
        result.failed_stage = "round"
        result.failure_message = str(exc)
        return result
    result.wall_times["round"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        result.shape_result = shape_descent_loop(
            shape_grid,
            coeffs,
            result.phi0,
            measurements,
            cell_mask=fine_mask,
            params=ShapeGradientParams(
                alpha=config.shape.alpha,
                eps_psi=config.shape.eps_psi,
                max_iters=config.shape.max_iters,
                halve_dt_on_increase=config.shape.halve_dt_on_increase,
            ),
            transport=TransportParams(config.transport.dt, config.transport.eps_factor),
            on_iteration=on_shape_iteration,
        )
    except SolverError as exc:
        result.failed_stage = "shape"
        result.failure_message = str(exc)
        return result
    result.wall_times["shape"] = time.perf_counter() - t0

    if truth is not None:
        result.report = compare_levelsets(result.shape_result.phi, truth)
    return result
