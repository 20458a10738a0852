"""Relaxed source-identification stage: box-constrained optimal control.

Replaces the binary source by a control f with values in [0, 1] and solves

    min_f  1/2 (u - u_bar)^T Mt (u - u_bar) + mu/2 f^T M f
    s.t.   S u = M f,   0 <= f <= 1

by a primal-dual active-set semismooth Newton method. Each Newton step is
the symmetric saddle system

    [ H      X_A^T ] [ df   ]     [ grad(f) + lambda_A (zero-extended) ]
    [ X_A    0     ] [ dl_A ] = - [ f_A - bounds_A                     ]

with H the reduced Hessian applied matrix-free (two PDE solves per
application) and X_A the restriction to the active set; the system is
solved with MINRES, so its dimension n + |A| changes whenever the active
set does.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .fem import ModelCoefficients, assemble_mass, assemble_measurement_mass, assemble_state_operator
from .grid import ScalarField, StructuredGrid
from .linalg import MatVecOperator, SolverError, make_solver, minres

LOWER_BOUND = 0.0
UPPER_BOUND = 1.0


class ReducedProblem:
    """Reduced objective, gradient and Hessian of the relaxed problem.

    Holds the factorized state operator; every gradient evaluation costs one
    state and one adjoint solve, every Hessian application two solves.
    """

    def __init__(
        self,
        grid: StructuredGrid,
        coeffs: ModelCoefficients,
        u_bar: ScalarField,
        mu: float,
        cell_mask=None,
        solver_tol: float = 1e-12,
        solver_method: str = "direct",
    ):
        if not mu > 0:
            raise ValueError(f"regularization weight must be positive, got {mu}")
        if u_bar.grid != grid:
            raise ValueError("measurements live on a different grid")
        self.grid = grid
        self.coeffs = coeffs
        self.mu = float(mu)
        self.u_bar = u_bar.coeffs
        self.M = assemble_mass(grid)
        self.M_meas = assemble_measurement_mass(grid, cell_mask)
        self.S = assemble_state_operator(grid, coeffs)
        self.solver = make_solver(self.S, tol=solver_tol, method=solver_method)

    @property
    def n(self) -> int:
        return self.grid.n_nodes

    @property
    def pde_solves(self) -> int:
        return self.solver.solve_count

    def state(self, f: np.ndarray) -> np.ndarray:
        return self.solver.solve(self.M @ f)

    def objective(self, f: np.ndarray) -> float:
        r = self.state(f) - self.u_bar
        return 0.5 * float(r @ (self.M_meas @ r)) + 0.5 * self.mu * float(f @ (self.M @ f))

    def gradient(self, f: np.ndarray) -> np.ndarray:
        r = self.state(f) - self.u_bar
        p = self.solver.solve_transpose(self.M_meas @ r)
        return self.M @ p + self.mu * (self.M @ f)

    def hessian_apply(self, v: np.ndarray) -> np.ndarray:
        u = self.solver.solve(self.M @ v)
        p = self.solver.solve_transpose(self.M_meas @ u)
        return self.M @ p + self.mu * (self.M @ v)


@dataclass
class ActiveSetState:
    """Control iterate, multiplier, and the bound active-set partition."""

    f: np.ndarray
    lam: np.ndarray
    active_upper: np.ndarray  # indices predicted at the upper bound
    active_lower: np.ndarray
    inactive: np.ndarray
    gamma: float

    @property
    def active(self) -> np.ndarray:
        """All active indices: upper first, then lower (fixed ordering)."""
        return np.concatenate([self.active_upper, self.active_lower])

    def same_sets(self, other: "ActiveSetState") -> bool:
        return np.array_equal(self.active_upper, other.active_upper) and np.array_equal(
            self.active_lower, other.active_lower
        )


def initial_state(n: int, gamma: float, f0: float = 0.5) -> ActiveSetState:
    state = ActiveSetState(
        f=np.full(n, f0),
        lam=np.zeros(n),
        active_upper=np.empty(0, dtype=int),
        active_lower=np.empty(0, dtype=int),
        inactive=np.arange(n),
        gamma=float(gamma),
    )
    return update_active_sets(state)


def update_active_sets(state: ActiveSetState) -> ActiveSetState:
    """Re-predict the active sets from the current primal-dual pair."""
    if not state.gamma > 0:
        raise ValueError(f"active-set parameter gamma must be positive, got {state.gamma}")
    up = state.lam + state.gamma * (state.f - UPPER_BOUND) > 0
    lo = state.lam + state.gamma * (state.f - LOWER_BOUND) < 0
    # Mutually exclusive for gamma > 0 and finite lambda with lower < upper.
    assert not np.any(up & lo), "upper and lower active sets overlap"
    return ActiveSetState(
        f=state.f,
        lam=state.lam,
        active_upper=np.flatnonzero(up),
        active_lower=np.flatnonzero(lo),
        inactive=np.flatnonzero(~(up | lo)),
        gamma=state.gamma,
    )


def kkt_operator(problem: ReducedProblem, active: np.ndarray) -> MatVecOperator:
    """Matrix-free symmetric saddle operator [[H, X_A^T], [X_A, 0]]."""
    n = problem.n
    m = active.size

    def apply(z: np.ndarray) -> np.ndarray:
        v, q = z[:n], z[n:]
        top = problem.hessian_apply(v)
        if m:
            top = top.copy()
            top[active] += q
        return np.concatenate([top, v[active]])

    return MatVecOperator(n + m, apply)


def newton_step(problem: ReducedProblem, state: ActiveSetState, tol: float):
    """One semismooth Newton step; returns (df, dlam_A, report)."""
    n = problem.n
    grad = problem.gradient(state.f)
    lam_active = np.zeros(n)
    act = state.active
    lam_active[act] = state.lam[act]
    rhs_top = grad + lam_active
    rhs_bottom = np.concatenate(
        [state.f[state.active_upper] - UPPER_BOUND, state.f[state.active_lower] - LOWER_BOUND]
    )
    rhs = -np.concatenate([rhs_top, rhs_bottom])
    z, report = minres(kkt_operator(problem, act), rhs, tol=tol)
    return z[:n], z[n:], report


@dataclass
class RelaxIterationRecord:
    iteration: int
    step_norm: float
    minres_iterations: int
    n_active_upper: int
    n_active_lower: int
    objective: float
    pde_solves: int


@dataclass
class RelaxResult:
    f: ScalarField
    lam: np.ndarray
    converged: bool
    iterations: int
    history: list[RelaxIterationRecord] = field(repr=False)
    state: ActiveSetState = field(repr=False, default=None)


def solve_relaxed(
    problem: ReducedProblem,
    f0: float | np.ndarray = 0.5,
    eps_newton: float = 1e-12,
    gamma: float = 2e1,
    max_iter: int = 50,
) -> RelaxResult:
    """Primal-dual active-set iteration until the Newton step norm falls
    below `eps_newton`; raises SolverError past `max_iter` iterations."""
    n = problem.n
    if np.ndim(f0) == 0:
        state = initial_state(n, gamma, float(f0))
    else:
        state = update_active_sets(
            ActiveSetState(
                f=np.asarray(f0, dtype=float).copy(),
                lam=np.zeros(n),
                active_upper=np.empty(0, dtype=int),
                active_lower=np.empty(0, dtype=int),
                inactive=np.arange(n),
                gamma=float(gamma),
            )
        )

    history: list[RelaxIterationRecord] = []
    for k in range(max_iter):
        state = update_active_sets(state)
        df, dlam, report = newton_step(problem, state, tol=eps_newton)
        f_new = state.f + df
        lam_new = np.zeros(n)
        lam_new[state.active] = state.lam[state.active] + dlam
        state = ActiveSetState(
            f=f_new,
            lam=lam_new,
            active_upper=state.active_upper,
            active_lower=state.active_lower,
            inactive=state.inactive,
            gamma=state.gamma,
        )
        step_norm = float(np.sqrt(df @ df + dlam @ dlam))
        history.append(
            RelaxIterationRecord(
                iteration=k,
                step_norm=step_norm,
                minres_iterations=report.iterations,
                n_active_upper=state.active_upper.size,
                n_active_lower=state.active_lower.size,
                objective=problem.objective(f_new),
                pde_solves=problem.pde_solves,
            )
        )
        if step_norm <= eps_newton:
            return RelaxResult(
                f=ScalarField(problem.grid, f_new),
                lam=lam_new,
                converged=True,
                iterations=k + 1,
                history=history,
                state=state,
            )
    raise SolverError(
        f"active-set Newton did not converge in {max_iter} iterations "
        f"(last step norm {history[-1].step_norm:.3e})",
        history,
    )
