"""Linear solvers: factorized nonsymmetric solves and matrix-free MINRES.

The state/adjoint systems are nonsymmetric and solved by a sparse LU
factorization by default (an ILU-preconditioned GMRES path can be selected
instead); the saddle-point systems of the active-set Newton method are
symmetric indefinite and solved by MINRES against an operator contract, so
the system matrix is never formed.

All solves satisfy ||A x - rhs||_2 <= tol * max(1, ||rhs||_2) on success and
raise with an attached report otherwise. Everything here is deterministic:
identical inputs give bit-identical outputs and iteration counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, gmres, spilu, splu


class SolverError(RuntimeError):
    """Linear solve failed; carries the solver report when available."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SingularOperatorError(SolverError):
    """The operator is (numerically) singular."""


@dataclass
class SolverReport:
    iterations: int
    final_residual: float
    converged: bool
    residual_norms: list[float] = field(default_factory=list, repr=False)


class MatVecOperator:
    """Matrix-free linear operator: a dimension and an apply function.

    Safe for concurrent read-only use; `apply_count` tracks the number of
    operator applications (used to audit PDE-solve accounting).
    """

    def __init__(self, dim: int, apply):
        self.dim = int(dim)
        self._apply = apply
        self.apply_count = 0

    def apply(self, x: np.ndarray) -> np.ndarray:
        self.apply_count += 1
        return self._apply(x)


def as_operator(A) -> MatVecOperator:
    if isinstance(A, MatVecOperator):
        return A
    if sparse.issparse(A) or isinstance(A, np.ndarray):
        if A.shape[0] != A.shape[1]:
            raise ValueError("operator must be square")
        return MatVecOperator(A.shape[0], lambda x, _A=A: _A @ x)
    raise TypeError(f"cannot interpret {type(A)!r} as a linear operator")


def _residual_target(tol: float, rhs_norm: float) -> float:
    return tol * max(1.0, rhs_norm)


class DirectSolver:
    """Sparse LU factorization of a nonsymmetric operator.

    Factorizes once; `solve` and `solve_transpose` then share the factors,
    which is what makes the adjoint solves in the optimization loops cheap.
    Near-zero pivots and unmet residuals raise instead of returning garbage
    (the velocity-free pure-Neumann configuration is singular and must be
    rejected).
    """

    def __init__(self, A, tol: float = 1e-10):
        self.A = sparse.csr_matrix(A)
        self.tol = float(tol)
        self.solve_count = 0
        try:
            self._lu = splu(sparse.csc_matrix(A))
        except RuntimeError as exc:
            raise SingularOperatorError(f"LU factorization failed: {exc}") from exc
        d = np.abs(self._lu.U.diagonal())
        if d.size and d.min() <= 1e-13 * d.max():
            raise SingularOperatorError(
                f"operator is numerically singular (pivot ratio {d.min() / d.max():.2e})"
            )

    def _solve(self, rhs: np.ndarray, trans: str) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        x = self._lu.solve(rhs, trans=trans)
        self.solve_count += 1
        op = self.A if trans == "N" else self.A.T
        residual = np.linalg.norm(op @ x - rhs)
        if not np.isfinite(x).all() or residual > _residual_target(self.tol, np.linalg.norm(rhs)):
            raise SingularOperatorError(
                f"direct solve residual {residual:.3e} exceeds tolerance; operator singular "
                "or severely ill-conditioned"
            )
        return x

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self._solve(rhs, "N")

    def solve_transpose(self, rhs: np.ndarray) -> np.ndarray:
        return self._solve(rhs, "T")


class IterativeSolver:
    """ILU-preconditioned restarted GMRES with the same residual contract."""

    def __init__(self, A, tol: float = 1e-10):
        self.A = sparse.csr_matrix(A)
        self.tol = float(tol)
        self.solve_count = 0
        try:
            self._ilu = spilu(sparse.csc_matrix(A), drop_tol=1e-8, fill_factor=20)
        except RuntimeError as exc:
            raise SingularOperatorError(f"ILU factorization failed: {exc}") from exc

    def _solve(self, rhs: np.ndarray, trans: str) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        n = rhs.size
        op = self.A if trans == "N" else self.A.T.tocsr()
        precond = LinearOperator((n, n), matvec=lambda b: self._ilu.solve(b, trans=trans))
        x, info = gmres(op, rhs, rtol=self.tol, atol=self.tol, restart=50, maxiter=n, M=precond)
        self.solve_count += 1
        residual = np.linalg.norm(op @ x - rhs)
        if info != 0 or residual > _residual_target(self.tol, np.linalg.norm(rhs)):
            raise SolverError(
                f"GMRES did not reach the residual target (info={info}, residual={residual:.3e})",
                SolverReport(abs(info), residual, False),
            )
        return x

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self._solve(rhs, "N")

    def solve_transpose(self, rhs: np.ndarray) -> np.ndarray:
        return self._solve(rhs, "T")


def make_solver(A, tol: float = 1e-10, method: str = "direct"):
    if method == "direct":
        return DirectSolver(A, tol)
    if method == "iterative":
        return IterativeSolver(A, tol)
    raise ValueError(f"unknown solver method {method!r}")


def solve_nonsymmetric(A, rhs, tol: float = 1e-10, method: str = "direct"):
    """Solve the nonsymmetric system A x = rhs; returns (x, report).

    Singular operators (e.g. the pure-Neumann operator at zero velocity)
    raise SingularOperatorError rather than returning a garbage solution.
    """
    solver = make_solver(A, tol, method)
    x = solver.solve(np.asarray(rhs, dtype=float))
    residual = float(np.linalg.norm(sparse.csr_matrix(A) @ x - rhs))
    return x, SolverReport(iterations=solver.solve_count, final_residual=residual, converged=True)


def _symmetry_check(op: MatVecOperator, rng_seed: int = 0) -> None:
    rng = np.random.default_rng(rng_seed)
    z1 = rng.standard_normal(op.dim)
    z2 = rng.standard_normal(op.dim)
    az1, az2 = op.apply(z1), op.apply(z2)
    gap = abs(z2 @ az1 - z1 @ az2)
    scale = np.linalg.norm(az1) * np.linalg.norm(z2) + np.linalg.norm(az2) * np.linalg.norm(z1)
    if gap > 1e-8 * max(scale, 1e-30):
        raise ValueError(f"operator is not symmetric (randomized check gap {gap:.3e})")


def minres(A, rhs, tol: float = 1e-10, maxiter: int | None = None, check_symmetry: bool = False):
    """MINRES for symmetric (possibly indefinite) systems; returns (x, report).

    Matrix-free: `A` may be a MatVecOperator, a sparse matrix, or an ndarray.
    The Lanczos/Givens recurrence tracks the residual norm (monotonically
    non-increasing); on estimated convergence the true residual is verified
    once before the converged flag is set. Failure to converge within the
    iteration cap (default 10 * dim) raises SolverError with the report.
    """
    op = as_operator(A)
    rhs = np.asarray(rhs, dtype=float)
    if rhs.size != op.dim:
        raise ValueError(f"rhs size {rhs.size} does not match operator dim {op.dim}")
    if check_symmetry:
        _symmetry_check(op)
    n = op.dim
    if maxiter is None:
        maxiter = 10 * n

    bnorm = float(np.linalg.norm(rhs))
    target = _residual_target(tol, bnorm)
    x = np.zeros(n)
    norms = [bnorm]
    if bnorm <= target:
        return x, SolverReport(0, bnorm, True, norms)

    # Paige-Saunders recurrences; r1/r2 carry the unnormalized Lanczos
    # vectors beta_k v_k so no extra storage is needed.
    y = rhs.copy()
    r1 = rhs.copy()
    r2 = rhs.copy()
    oldb, beta = 0.0, bnorm
    dbar = epsln = sn = 0.0
    cs = -1.0
    phibar = bnorm
    w = np.zeros(n)
    w2 = np.zeros(n)
    itn = 0

    while itn < maxiter:
        itn += 1
        v = y / beta
        y = op.apply(v)
        if itn >= 2:
            y -= (beta / oldb) * r1
        alfa = float(v @ y)
        y -= (alfa / beta) * r2
        r1, r2 = r2, y
        oldb, beta = beta, float(np.linalg.norm(y))

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta

        gamma = max(np.hypot(gbar, beta), np.finfo(float).eps)
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w, w2 = (v - oldeps * w2 - delta * w) / gamma, w
        x = x + phi * w
        norms.append(abs(phibar))

        if abs(phibar) <= target or beta == 0.0:
            true_residual = float(np.linalg.norm(rhs - op.apply(x)))
            if true_residual <= target:
                return x, SolverReport(itn, true_residual, True, norms)
            if beta == 0.0:
                break

    final = float(np.linalg.norm(rhs - op.apply(x)))
    report = SolverReport(itn, final, final <= target, norms)
    if not report.converged:
        raise SolverError(
            f"MINRES did not converge in {itn} iterations (residual {final:.3e}, target {target:.3e})",
            report,
        )
    return x, report
