"""Scikit-learn style estimator facade over the identification pipeline.

`SourceIdentifier` behaves like any sklearn estimator: constructor
parameters mirror the run configuration, `fit` consumes nodal measurement
values and exposes the recovered region through fitted attributes,
`predict` classifies arbitrary points as inside/outside, and
`get_params`/`set_params` come from BaseEstimator so the class composes
with pipelines and parameter searches.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .config import (
    DataConfig,
    GridConfig,
    ModelConfig,
    OutputConfig,
    ProblemConfig,
    RelaxConfig,
    ShapeConfig,
    TransportConfig,
)
from .grid import ScalarField
from .levelset import LevelSet
from .metrics import compare_levelsets
from .pipeline import grids_from_config, run_pipeline


def _as_nodal_array(X, grid) -> np.ndarray:
    """Validate measurement input: finite nodal values matching the grid."""
    a = np.asarray(X, dtype=float)
    if a.ndim == 2 and a.shape == (grid.ny + 1, grid.nx + 1):
        a = a.ravel()
    if a.ndim != 1 or a.size != grid.n_nodes:
        raise ValueError(
            f"expected {grid.n_nodes} nodal values (or shape "
            f"({grid.ny + 1}, {grid.nx + 1})), got array of shape {np.shape(X)}"
        )
    if not np.isfinite(a).all():
        raise ValueError("measurements contain non-finite values")
    return a


class SourceIdentifier(BaseEstimator):
    """Recover a binary source region from concentration measurements.

    Parameters mirror the run configuration: the domain/grid, the flow model
    (diffusivity `c`, constant velocity `(bx, by)`), the relaxation stage
    (`mu`, `gamma`, `eps_newton`, `max_newton`), the shape stage (`alpha`,
    `eps_psi`, `max_shape_iters`) and the level-set transport (`dt`,
    `eps_factor`). `relax_level`/`shape_level` select how often the base
    grid is refined for each stage; measurements live on the shape grid.

    Attributes (after fit)
    ----------------------
    levelset_ : LevelSet
        Final level-set on the shape grid; the source set is {phi > 0}.
    relaxed_control_ : ScalarField
        Minimizer of the relaxed problem on the coarse grid.
    initial_levelset_ : LevelSet
        Rounded and interpolated initial guess for the shape stage.
    n_components_ : int
        Connected components of the recovered set.
    result_ : PipelineResult
        Full record including stage histories.
    """

    def __init__(
        self,
        lx=3.0,
        ly=1.0,
        nx=30,
        ny=10,
        relax_level=0,
        shape_level=2,
        c=0.01,
        bx=1.0,
        by=0.0,
        mu=5e-2,
        gamma=2e1,
        eps_newton=1e-12,
        max_newton=50,
        alpha=3e-1,
        eps_psi=1e-4,
        max_shape_iters=600,
        dt=0.3,
        eps_factor=1e-2,
        sensors="full",
    ):
        self.lx = lx
        self.ly = ly
        self.nx = nx
        self.ny = ny
        self.relax_level = relax_level
        self.shape_level = shape_level
        self.c = c
        self.bx = bx
        self.by = by
        self.mu = mu
        self.gamma = gamma
        self.eps_newton = eps_newton
        self.max_newton = max_newton
        self.alpha = alpha
        self.eps_psi = eps_psi
        self.max_shape_iters = max_shape_iters
        self.dt = dt
        self.eps_factor = eps_factor
        self.sensors = sensors

    def _config(self) -> ProblemConfig:
        return ProblemConfig(
            grid=GridConfig(self.lx, self.ly, self.nx, self.ny, self.relax_level, self.shape_level),
            model=ModelConfig(self.c, self.bx, self.by),
            relax=RelaxConfig(self.mu, self.gamma, self.eps_newton, self.max_newton),
            shape=ShapeConfig(self.alpha, self.eps_psi, self.max_shape_iters),
            transport=TransportConfig(self.dt, self.eps_factor),
            data=DataConfig(sensors=self.sensors),
            output=OutputConfig(),
        ).validate()

    def fit(self, X, y=None):
        """Run the two-stage identification on nodal measurements `X`.

        X is a flat array of shape (n_nodes,) or a (ny+1, nx+1) array on the
        shape-stage grid; y is ignored (unsupervised recovery).
        """
        config = self._config()
        relax_grid, shape_grid = grids_from_config(config)
        measurements = ScalarField(shape_grid, _as_nodal_array(X, shape_grid))
        from .pipeline import sensors_from_config

        layout = sensors_from_config(config, relax_grid)
        result = run_pipeline(config, measurements=measurements, layout=layout)
        if result.failed_stage is not None:
            raise RuntimeError(
                f"stage {result.failed_stage!r} failed: {result.failure_message}"
            )
        self.result_ = result
        self.relaxed_control_ = result.relax_result.f
        self.initial_levelset_ = result.phi0
        self.levelset_ = result.shape_result.phi
        from .levelset import count_components

        self.n_components_ = count_components(self.levelset_)
        return self

    def _check_fitted(self):
        if not hasattr(self, "levelset_"):
            raise NotFittedError("this SourceIdentifier instance is not fitted yet")

    def predict(self, points) -> np.ndarray:
        """Boolean in/out classification of (m, 2) points."""
        self._check_fitted()
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"expected points of shape (m, 2), got {pts.shape}")
        return self.levelset_(pts) > 0

    def score(self, X=None, y=None) -> float:
        """IoU of the recovered cell set against a truth level-set `y`
        (nodal values on the shape grid); X is ignored."""
        self._check_fitted()
        grid = self.levelset_.grid
        truth = LevelSet(ScalarField(grid, _as_nodal_array(y, grid)))
        return compare_levelsets(self.levelset_, truth).iou
