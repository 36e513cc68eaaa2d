"""Local cost functions and the per-agent augmented subproblem solver.

Each agent's subproblem minimizes ``f(x) + lam.x + 0.5*||x - z||^2_B``
(with ``B = rho*I`` in the scalar-penalty case). Objectives that admit a
closed-form minimizer register it via ``solve_augmented``; the damped
Newton path is always available as a cross-check.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, InvalidInputError, OracleError

SOLVE_TOL = 1e-10
SOLVE_MAX_ITERS = 100
ARMIJO_SLOPE = 1e-4


class LocalObjective:
    """One agent's smooth cost with value/gradient/Hessian evaluation."""

    dim: int
    convex: bool = False
    strong_convexity = None  # mu, when known
    smoothness = None  # gradient Lipschitz constant, when known

    def value(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, x) -> np.ndarray:
        raise NotImplementedError

    # closed-form augmented minimizers; None means "use the Newton path"
    def solve_augmented(self, lam, z, rho):
        return None

    def solve_augmented_metric(self, lam, z, metric):
        return None

    def _check_constants(self):
        mu, lip = self.strong_convexity, self.smoothness
        if mu is not None and lip is not None and not 0 < mu <= lip:
            raise InvalidInputError(f"need 0 < mu <= L, got mu={mu}, L={lip}")


class QuadraticObjective(LocalObjective):
    """0.5*||x - target||^2; minimizer is the target itself."""

    convex = True
    strong_convexity = 1.0
    smoothness = 1.0

    def __init__(self, target):
        self.target = np.asarray(target, dtype=float)
        if self.target.ndim != 1:
            raise InvalidInputError("target must be a vector")
        self.dim = self.target.size
        self._check_constants()

    def value(self, x):
        d = np.asarray(x, float) - self.target
        return 0.5 * float(d @ d)

    def gradient(self, x):
        return np.asarray(x, float) - self.target

    def hessian(self, x):
        return np.eye(self.dim)

    def solve_augmented(self, lam, z, rho):
        return (self.target + rho * z - lam) / (1.0 + rho)

    def solve_augmented_metric(self, lam, z, metric):
        rhs = self.target + metric @ z - lam
        return np.linalg.solve(np.eye(self.dim) + metric, rhs)


class QuadraticFormObjective(LocalObjective):
    """0.5*(x-c)'Q(x-c) + slope.(x-c) for a symmetric PD matrix Q.

    Used as the per-agent surrogate when the coordination step is itself
    solved as a consensus problem.
    """

    convex = True

    def __init__(self, matrix, center, slope):
        self.matrix = np.asarray(matrix, float)
        self.center = np.asarray(center, float)
        self.slope = np.asarray(slope, float)
        self.dim = self.center.size

    def value(self, x):
        d = np.asarray(x, float) - self.center
        return 0.5 * float(d @ self.matrix @ d) + float(self.slope @ d)

    def gradient(self, x):
        return self.matrix @ (np.asarray(x, float) - self.center) + self.slope

    def hessian(self, x):
        return self.matrix.copy()

    def solve_augmented(self, lam, z, rho):
        lhs = self.matrix + rho * np.eye(self.dim)
        rhs = self.matrix @ self.center - self.slope - lam + rho * z
        return np.linalg.solve(lhs, rhs)

    def solve_augmented_metric(self, lam, z, metric):
        lhs = self.matrix + metric
        rhs = self.matrix @ self.center - self.slope - lam + metric @ z
        return np.linalg.solve(lhs, rhs)


class SensorObjective(LocalObjective):
    """Two quadratic data-fit blocks coupled by a quartic squared-difference term.

    The variable stacks two equal-length blocks, x = [a; b], with cost
    0.5*||a - target_a||^2 + 0.5*||b - target_b||^2
      + sum_j ((a_j - b_j)^2 - coupling_j)^2.
    Non-convex whenever some coupling component is positive enough.
    """

    convex = False

    def __init__(self, target_a, target_b, coupling):
        self.target_a = np.asarray(target_a, float)
        self.target_b = np.asarray(target_b, float)
        self.coupling = np.asarray(coupling, float)
        if not self.target_a.shape == self.target_b.shape == self.coupling.shape:
            raise InvalidInputError("block data must share one shape")
        self.block = self.target_a.size
        self.dim = 2 * self.block

    def _split(self, x):
        x = np.asarray(x, float)
        return x[: self.block], x[self.block :]

    def value(self, x):
        a, b = self._split(x)
        d = a - b
        r = d * d - self.coupling
        return 0.5 * float((a - self.target_a) @ (a - self.target_a)) + 0.5 * float(
            (b - self.target_b) @ (b - self.target_b)
        ) + float(r @ r)

    def gradient(self, x):
        a, b = self._split(x)
        d = a - b
        pull = 4.0 * (d * d - self.coupling) * d
        return np.concatenate([a - self.target_a + pull, b - self.target_b - pull])

    def hessian(self, x):
        a, b = self._split(x)
        d = a - b
        q = 8.0 * d * d + 4.0 * (d * d - self.coupling)
        h = np.zeros((self.dim, self.dim))
        m = self.block
        h[:m, :m] = np.diag(1.0 + q)
        h[m:, m:] = np.diag(1.0 + q)
        h[:m, m:] = np.diag(-q)
        h[m:, :m] = np.diag(-q)
        return h


@dataclass
class ProblemInstance:
    """N local objectives sharing one decision dimension, plus an optional reference."""

    objectives: list
    dim: int
    reference_z: np.ndarray = None
    reference_duals: np.ndarray = None  # shape (N, dim)
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for i, obj in enumerate(self.objectives):
            if obj.dim != self.dim:
                raise InvalidInputError(
                    f"objective {i} has dimension {obj.dim}, expected {self.dim}"
                )

    @property
    def agent_count(self):
        return len(self.objectives)


def _descent_direction(hess, grad):
    """Newton direction; eigenvalue-clamped when the matrix is not PD."""
    try:
        np.linalg.cholesky(hess)
        return np.linalg.solve(hess, -grad)
    except np.linalg.LinAlgError:
        w, vecs = np.linalg.eigh(hess)
        floor = max(1e-8, 1e-6 * float(np.max(np.abs(w))))
        w = np.maximum(w, floor)
        return -(vecs @ ((vecs.T @ grad) / w))


def _augmented_newton(objective, lam, z, metric, tol, max_iters):
    """Damped Newton on the stationarity system of the augmented objective.

    Solves grad f(x) + lam + B(x - z) = 0 from the warm start x = z, with
    halving backtracking on the residual norm. Because the merit is the
    residual, the solve lands on the stationary point nearest the warm
    start even where the augmented Hessian is indefinite; for convex
    objectives this coincides with the damped-Newton minimizer.
    """

    def residual(x):
        return objective.gradient(x) + lam + metric @ (x - z)

    def backtrack(x, direction, res_norm):
        step = 1.0
        while step >= 1e-14:
            trial = x + step * direction
            trial_res = residual(trial)
            trial_norm = float(np.linalg.norm(trial_res))
            if np.isfinite(trial_norm) and trial_norm <= (1.0 - ARMIJO_SLOPE * step) * res_norm:
                return trial, trial_res, trial_norm
            step *= 0.5
        return None

    x = np.asarray(z, float).copy()
    res = residual(x)
    res_norm = float(np.linalg.norm(res))
    best_x, best_res = x.copy(), res_norm
    for _ in range(max_iters):
        if res_norm <= tol:
            return x
        hess = objective.hessian(x) + metric
        try:
            direction = np.linalg.solve(hess, -res)
        except np.linalg.LinAlgError:
            shift = 1e-8 * (1.0 + float(np.max(np.abs(hess))))
            direction = np.linalg.solve(hess + shift * np.eye(hess.shape[0]), -res)
        accepted = backtrack(x, direction, res_norm)
        if accepted is None:
            # steepest descent on the squared-residual merit
            accepted = backtrack(x, -(hess @ res), res_norm)
        if accepted is None:
            raise ConvergenceError(
                "line search stalled in local subproblem",
                iterate=best_x,
                residual=best_res,
            )
        x, res, res_norm = accepted
        if res_norm < best_res:
            best_x, best_res = x.copy(), res_norm
    if res_norm <= tol:
        return x
    raise ConvergenceError(
        f"local subproblem did not reach residual {tol} in {max_iters} iterations",
        iterate=best_x,
        residual=best_res,
    )


def local_solve(objective, lam, z, rho, tol=SOLVE_TOL, max_iters=SOLVE_MAX_ITERS,
                newton_only=False):
    """Minimize f(x) + lam.x + rho/2*||x - z||^2 to the stated residual."""
    if rho <= 0:
        raise InvalidInputError(f"rho must be positive, got {rho}")
    lam = np.asarray(lam, float)
    z = np.asarray(z, float)
    if lam.shape != (objective.dim,) or z.shape != (objective.dim,):
        raise InvalidInputError("lam and z must match the objective dimension")
    if not newton_only:
        fast = objective.solve_augmented(lam, z, rho)
        if fast is not None:
            return fast
    return _augmented_newton(objective, lam, z, rho * np.eye(objective.dim), tol, max_iters)


def local_solve_metric(objective, lam, z, metric, tol=SOLVE_TOL, max_iters=SOLVE_MAX_ITERS,
                       newton_only=False):
    """Minimize f(x) + lam.x + 0.5*||x - z||^2_B for a symmetric PD metric B."""
    metric = np.asarray(metric, float)
    if metric.shape != (objective.dim, objective.dim):
        raise InvalidInputError("metric must be n-by-n")
    if not np.allclose(metric, metric.T, atol=1e-12):
        raise InvalidInputError("metric must be symmetric")
    try:
        np.linalg.cholesky(metric)
    except np.linalg.LinAlgError:
        raise InvalidInputError("metric must be positive definite") from None
    lam = np.asarray(lam, float)
    z = np.asarray(z, float)
    if not newton_only:
        fast = objective.solve_augmented_metric(lam, z, metric)
        if fast is not None:
            return fast
    return _augmented_newton(objective, lam, z, metric, tol, max_iters)


def minimize_sum(objectives, x0, gtol=1e-12, max_iters=1000):
    """High-accuracy damped Newton on the summed objective; the reference oracle.

    A descent phase with eigenvalue-safeguarded directions walks into a
    basin; once the gradient is small, plain Newton on the stationarity
    system polishes quadratically to the requested accuracy.
    """
    x = np.asarray(x0, float).copy()

    def total_grad(v):
        return np.sum([obj.gradient(v) for obj in objectives], axis=0)

    def total_hess(v):
        return np.sum([obj.hessian(v) for obj in objectives], axis=0)

    def total_value(v):
        return sum(obj.value(v) for obj in objectives)

    grad = total_grad(x)
    for _ in range(max_iters):
        if np.linalg.norm(grad) <= 1e-6:
            break
        direction = _descent_direction(total_hess(x), grad)
        slope = float(grad @ direction)
        base = total_value(x)
        step = 1.0
        while total_value(x + step * direction) > base + ARMIJO_SLOPE * step * slope:
            step *= 0.5
            if step < 1e-14:
                raise OracleError("centralized solve stalled in line search")
        x = x + step * direction
        grad = total_grad(x)
    else:
        raise OracleError("centralized solve made no basin progress")

    for _ in range(50):
        if np.linalg.norm(grad) <= gtol:
            return x
        x = x + np.linalg.solve(total_hess(x), -grad)
        grad = total_grad(x)
    raise OracleError(f"centralized solve did not reach gradient norm {gtol}")


def reference_solution(problem: ProblemInstance, x0=None):
    """Optimal consensus point and the stationarity duals lam_i = -grad f_i(z*).

    All-quadratic instances use the exact mean; otherwise a high-accuracy
    centralized Newton solve on the summed cost, which must end at a point
    where the summed Hessian is positive definite.
    """
    objs = problem.objectives
    if all(isinstance(o, QuadraticObjective) for o in objs):
        z_star = np.mean([o.target for o in objs], axis=0)
    else:
        if x0 is None:
            x0 = np.zeros(problem.dim)
        z_star = minimize_sum(objs, x0)
        total_hess = np.sum([o.hessian(z_star) for o in objs], axis=0)
        if np.min(np.linalg.eigvalsh(total_hess)) <= 0:
            raise OracleError("centralized solve ended at a non-minimizing stationary point")
    duals = np.stack([-o.gradient(z_star) for o in objs])
    return z_star, duals
