"""Command-line pipeline: generate, relax, shape, run, metrics.

Exit codes: 0 success, 1 stage non-convergence, 2 configuration error,
3 I/O error. The output directory resolves as --output flag, then the
PLUMEID_OUTPUT_DIR environment variable, then the config file.
"""

from __future__ import annotations

import json
import os
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import io
from .config import ConfigError, ProblemConfig, default_config, load_config, with_overrides
from .grid import prolongate
from .levelset import LevelSet, count_components, round_to_levelset
from .linalg import SolverError
from .metrics import compare_levelsets
from .pipeline import (
    generate_problem,
    grids_from_config,
    model_from_config,
    run_pipeline,
    sensors_from_config,
)
from .relax import ReducedProblem, solve_relaxed
from .synth import restrict_measurements

ENV_OUTPUT_DIR = "PLUMEID_OUTPUT_DIR"

EXIT_OK = 0
EXIT_STAGE_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_IO_ERROR = 3


def _load_config(config_path, output, seed, threads=None, snapshot_stride=None) -> ProblemConfig:
    config = default_config() if config_path is None else load_config(config_path)
    env_dir = os.environ.get(ENV_OUTPUT_DIR)
    out_dir = output if output is not None else env_dir
    return with_overrides(
        config, seed=seed, output_dir=out_dir, threads=threads, snapshot_stride=snapshot_stride
    )


def _prepare_output(config: ProblemConfig) -> Path:
    out = Path(config.output.dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise click.ClickException(f"cannot create output directory {out}: {exc}") from exc
    return out


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


_config_option = click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
    help="Run configuration file (INI sections; defaults match the 2D test case).",
)
_output_option = click.option("--output", type=click.Path(file_okay=False), default=None)
_seed_option = click.option("--seed", type=int, default=None, help="Override data.noise_seed.")
_threads_option = click.option("--threads", type=int, default=None, help="Assembly thread knob.")


@click.group()
def main():
    """Binary source-region recovery in advection-diffusion flows."""


@main.command()
@_config_option
@_output_option
@_seed_option
def generate(config_path, output, seed):
    """Generate the synthetic problem: truth level-set, measurements, mask."""
    try:
        config = _load_config(config_path, output, seed)
    except ConfigError as exc:
        _fail(EXIT_CONFIG_ERROR, str(exc))
    try:
        out = _prepare_output(config)
        generated = generate_problem(config)
        io.write_field(out / "truth_levelset.field", generated.truth)
        io.write_field(out / "measurements.field", generated.measurements)
        io.write_mask(out / "mask.json", generated.layout)
        if config.output.write_vtk:
            io.write_vtk(out / "truth_levelset.vtk", generated.truth, "truth")
            io.write_vtk(out / "measurements.vtk", generated.measurements, "measurements")
    except (OSError, io.FieldFormatError) as exc:
        _fail(EXIT_IO_ERROR, str(exc))
    click.echo(f"wrote truth_levelset.field, measurements.field, mask.json to {out}")


def _load_measurements(config: ProblemConfig, out: Path):
    """Measurements + layout, from the configured file or generated inline."""
    relax_grid, shape_grid = grids_from_config(config)
    if config.data.measurements_file:
        measurements = io.read_field(config.data.measurements_file)
        if measurements.grid != shape_grid:
            raise ConfigError(
                "measurements file grid does not match the shape-stage grid"
            )
        mask_path = Path(config.data.measurements_file).with_name("mask.json")
        layout = io.read_mask(mask_path) if mask_path.exists() else sensors_from_config(config, relax_grid)
        return measurements, layout, None
    generated = generate_problem(config)
    return generated.measurements, generated.layout, generated.truth


@main.command()
@_config_option
@_output_option
@_seed_option
def relax(config_path, output, seed):
    """Run only the relaxation stage; writes the control and its history."""
    try:
        config = _load_config(config_path, output, seed)
    except ConfigError as exc:
        _fail(EXIT_CONFIG_ERROR, str(exc))
    try:
        out = _prepare_output(config)
        measurements, layout, _ = _load_measurements(config, out)
        relax_grid, shape_grid = grids_from_config(config)
        u_bar = (
            measurements
            if relax_grid == shape_grid
            else restrict_measurements(measurements, relax_grid)
        )
        problem = ReducedProblem(
            relax_grid,
            model_from_config(config),
            u_bar,
            mu=config.relax.mu,
            cell_mask=None if layout is None else layout.cell_mask(relax_grid),
        )
        result = solve_relaxed(
            problem,
            eps_newton=config.relax.eps_newton,
            gamma=config.relax.gamma,
            max_iter=config.relax.max_newton,
        )
    except ConfigError as exc:
        _fail(EXIT_CONFIG_ERROR, str(exc))
    except SolverError as exc:
        _fail(EXIT_STAGE_FAILURE, f"relaxation stage failed: {exc}")
    except OSError as exc:
        _fail(EXIT_IO_ERROR, str(exc))
    io.write_field(out / "relaxed_control.field", result.f)
    io.write_history(out / "relax_history.csv", relax_history=result.history)
    click.echo(f"relaxation converged in {result.iterations} iterations; wrote {out}/relaxed_control.field")


@main.command()
@_config_option
@_output_option
@_seed_option
@click.option("--init", "init_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Initial level-set field file (default: round a relaxed_control.field in the output dir).")
@click.option("--snapshot-stride", type=int, default=None)
def shape(config_path, output, seed, init_path, snapshot_stride):
    """Run only the shape-optimization stage from an initial level-set."""
    try:
        config = _load_config(config_path, output, seed, snapshot_stride=snapshot_stride)
    except ConfigError as exc:
        _fail(EXIT_CONFIG_ERROR, str(exc))
    try:
        out = _prepare_output(config)
        measurements, layout, truth = _load_measurements(config, out)
        relax_grid, shape_grid = grids_from_config(config)
        if init_path is not None:
            phi0 = LevelSet(io.read_field(init_path))
        else:
            control_path = out / "relaxed_control.field"
            if not control_path.exists():
                raise ConfigError(
                    f"no --init given and {control_path} does not exist; run `plumeid relax` first"
                )
            phi0 = round_to_levelset(io.read_field(control_path))
        if phi0.grid != shape_grid:
            phi0 = LevelSet(prolongate(phi0.field, shape_grid))

        from .shapeopt import ShapeGradientParams, shape_descent_loop
        from .levelset import TransportParams

        result = shape_descent_loop(
            shape_grid,
            model_from_config(config),
            phi0,
            measurements,
            cell_mask=None if layout is None else layout.cell_mask(shape_grid),
            params=ShapeGradientParams(
                alpha=config.shape.alpha,
                eps_psi=config.shape.eps_psi,
                max_iters=config.shape.max_iters,
                halve_dt_on_increase=config.shape.halve_dt_on_increase,
            ),
            transport=TransportParams(config.transport.dt, config.transport.eps_factor),
            on_iteration=_snapshot_writer(config, out),
        )
    except ConfigError as exc:
        _fail(EXIT_CONFIG_ERROR, str(exc))
    except SolverError as exc:
        _fail(EXIT_STAGE_FAILURE, f"shape stage failed: {exc}")
    except OSError as exc:
        _fail(EXIT_IO_ERROR, str(exc))
    io.write_field(out / "final_levelset.field", result.phi)
    io.write_history(out / "shape_history.csv", shape_history=result.history)
    if config.output.write_vtk:
        io.write_vtk(out / "final_levelset.vtk", result.phi, "levelset")
    code = EXIT_OK if result.converged else EXIT_STAGE_FAILURE
    click.echo(
        f"shape stage {'converged' if result.converged else 'hit the iteration cap'} "
        f"after {result.iterations} iterations"
    )
    sys.exit(code)


def _snapshot_writer(config: ProblemConfig, out: Path):
    stride = config.output.snapshot_stride
    if stride <= 0:
        return None

    def writer(phi, record):
        if record.iteration % stride == 0:
            io.write_field(out / f"phi_{record.iteration:05d}.field", phi)

    return writer


@main.command()
@_config_option
@_output_option
@_seed_option
@_threads_option
@click.option("--snapshot-stride", type=int, default=None)
def run(config_path, output, seed, threads, snapshot_stride):
    """Run the full pipeline: relax, round, interpolate, shape, score."""
    try:
        config = _load_config(config_path, output, seed, threads, snapshot_stride)
    except ConfigError as exc:
        _fail(EXIT_CONFIG_ERROR, str(exc))
    try:
        out = _prepare_output(config)
        measurements = layout = truth = None
        if config.data.measurements_file:
            measurements, layout, truth = _load_measurements(config, out)
        started = time.perf_counter()
        result = run_pipeline(
            config,
            measurements=measurements,
            layout=layout,
            truth=truth,
            on_shape_iteration=_snapshot_writer(config, out),
        )
        total = time.perf_counter() - started

        relax_history = result.relax_result.history if result.relax_result else []
        shape_history = result.shape_result.history if result.shape_result else []
        io.write_history(out / "history.csv", relax_history, shape_history)
        if result.relax_result is not None:
            io.write_field(out / "relaxed_control.field", result.relax_result.f)
        if result.phi0 is not None:
            io.write_field(out / "initial_levelset.field", result.phi0)
        if result.shape_result is not None:
            io.write_field(out / "final_levelset.field", result.shape_result.phi)
            if config.output.write_vtk:
                io.write_vtk(out / "final_levelset.vtk", result.shape_result.phi, "levelset")
        if result.truth is not None:
            io.write_field(out / "truth_levelset.field", result.truth)
        record = {
            "config": config.to_dict(),
            "failed_stage": result.failed_stage,
            "failure_message": result.failure_message,
            "wall_times": result.wall_times,
            "total_wall_time": total,
            "relax": None
            if result.relax_result is None
            else {
                "converged": result.relax_result.converged,
                "iterations": result.relax_result.iterations,
                "pde_solves": relax_history[-1].pde_solves if relax_history else 0,
            },
            "shape": None
            if result.shape_result is None
            else {
                "converged": result.shape_result.converged,
                "iterations": result.shape_result.iterations,
                "pde_solves": shape_history[-1].pde_solves if shape_history else 0,
                "components": count_components(result.shape_result.phi),
            },
            "recovery": None
            if result.report is None
            else {
                "iou": result.report.iou,
                "symmetric_difference_area": result.report.symmetric_difference_area,
                "components": result.report.candidate_components,
                "truth_components": result.report.truth_components,
            },
        }
        (out / "run.json").write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")
    except ConfigError as exc:
        _fail(EXIT_CONFIG_ERROR, str(exc))
    except (OSError, io.FieldFormatError) as exc:
        _fail(EXIT_IO_ERROR, str(exc))

    if result.failed_stage is not None:
        _fail(EXIT_STAGE_FAILURE, f"stage {result.failed_stage} failed: {result.failure_message}")
    if result.shape_result is not None and not result.shape_result.converged:
        click.echo("shape stage hit the iteration cap (best iterate written)", err=True)
        sys.exit(EXIT_STAGE_FAILURE)
    summary = f"done; history and fields in {out}"
    if result.report is not None:
        summary += f" (IoU {result.report.iou:.3f}, {result.report.candidate_components} components)"
    click.echo(summary)


@main.command()
@click.argument("candidate", type=click.Path(exists=True, dir_okay=False))
@click.argument("truth", type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True, help="Print the report as JSON.")
def metrics(candidate, truth, as_json):
    """Score a recovered level-set field against a truth level-set field."""
    try:
        phi = LevelSet(io.read_field(candidate))
        ref = LevelSet(io.read_field(truth))
    except (OSError, io.FieldFormatError) as exc:
        _fail(EXIT_IO_ERROR, str(exc))
    try:
        report = compare_levelsets(phi, ref)
    except ValueError as exc:
        _fail(EXIT_CONFIG_ERROR, str(exc))
    if as_json:
        click.echo(
            json.dumps(
                {
                    "iou": report.iou,
                    "symmetric_difference_area": report.symmetric_difference_area,
                    "components": report.candidate_components,
                    "truth_components": report.truth_components,
                },
                sort_keys=True,
            )
        )
    else:
        click.echo(f"IoU: {report.iou:.6f}")
        click.echo(f"symmetric difference area: {report.symmetric_difference_area:.6g}")
        click.echo(
            f"components: {report.candidate_components} (truth {report.truth_components})"
        )


if __name__ == "__main__":
    main()
