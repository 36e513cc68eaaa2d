"""Coordinator-based consensus ALADIN.

Three variants share the same skeleton: per-agent augmented subproblem
solves, master-side gradient recovery, and a closed-form consensus QP.
The second-order variant rebuilds per-agent curvature with BFGS pairs on
the master; the first-order variant fixes the metric at rho*I; the
constant-metric variant runs with arbitrary fixed symmetric PD metrics.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics
from .errors import ConvergenceError, InvalidInputError
from .objectives import ProblemInstance, local_solve, local_solve_metric
from .trace import RunTrace, TraceRow

CURVATURE_RTOL = 1e-12

VARIANTS = ("second_order", "first_order", "constant_metric")


@dataclass
class CoordinatorState:
    z: np.ndarray
    duals: np.ndarray  # (N, n)
    metrics: list  # per-agent symmetric PD matrices
    prev_x: np.ndarray = None
    prev_grads: np.ndarray = None
    iteration: int = 0


@dataclass
class StepRecord:
    """Everything one coordination step produced, for traces and identity checks."""

    xs: np.ndarray
    grads: np.ndarray
    z_prev: np.ndarray
    z_new: np.ndarray
    duals_prev: np.ndarray
    duals_new: np.ndarray
    metrics: list = None
    extras: dict = field(default_factory=dict)


def init_coordinator(problem: ProblemInstance, rho, z0=None, duals0=None) -> CoordinatorState:
    n = problem.dim
    count = problem.agent_count
    z = np.zeros(n) if z0 is None else np.asarray(z0, float).copy()
    duals = np.zeros((count, n)) if duals0 is None else np.asarray(duals0, float).copy()
    metrics = [rho * np.eye(n) for _ in range(count)]
    return CoordinatorState(z=z, duals=duals, metrics=metrics)


def recover_gradient(rho, z_prev, x_new, dual_prev) -> np.ndarray:
    """Gradient of the local cost at x_new, decoded from subproblem stationarity."""
    return rho * (np.asarray(z_prev, float) - np.asarray(x_new, float)) - np.asarray(
        dual_prev, float
    )


DAMPING_FRACTION = 0.2


def bfgs_update(metric, s, y, curvature_rtol=CURVATURE_RTOL) -> np.ndarray:
    """Rank-two metric update from a step/gradient-difference pair.

    Skipped (metric returned unchanged) when the curvature s.y is not
    safely positive, which keeps the metric positive definite. Pairs whose
    curvature is positive but small relative to the metric's own s.Bs are
    damped the standard way (the difference vector is pulled toward Bs
    until s.y reaches the 0.2 fraction); without this, weak-curvature
    pairs inject near-zero eigenvalues that destabilize the coordination
    step on non-convex problems.
    """
    s = np.asarray(s, float)
    y = np.asarray(y, float)
    sy = float(s @ y)
    if sy <= curvature_rtol * float(np.linalg.norm(s) * np.linalg.norm(y)):
        return metric
    bs = metric @ s
    sbs = float(s @ bs)
    if sbs <= 0.0:
        return metric
    if sy < DAMPING_FRACTION * sbs:
        theta = (1.0 - DAMPING_FRACTION) * sbs / (sbs - sy)
        y = theta * y + (1.0 - theta) * bs
        sy = float(s @ y)
    updated = metric - np.outer(bs, bs) / sbs + np.outer(y, y) / sy
    updated = 0.5 * (updated + updated.T)
    try:
        np.linalg.cholesky(updated)
    except np.linalg.LinAlgError:
        return metric
    return updated


def consensus_qp_closed_form(xs, metrics, grads):
    """Closed-form coordination: new global point and per-agent duals.

    z = (sum B_i)^{-1} sum(B_i x_i - g_i);  lam_i = B_i (x_i - z) - g_i.
    The duals sum to zero by construction.
    """
    total = np.sum(metrics, axis=0)
    rhs = np.sum([metric @ x for metric, x in zip(metrics, xs)], axis=0) - np.sum(grads, axis=0)
    z = np.linalg.solve(total, rhs)
    duals = np.stack([metric @ (x - z) - g for metric, x, g in zip(metrics, xs, grads)])
    return z, duals


def _solve_agents(problem, state, rho):
    xs = np.empty((problem.agent_count, problem.dim))
    for i, obj in enumerate(problem.objectives):
        try:
            xs[i] = local_solve(obj, state.duals[i], state.z, rho)
        except ConvergenceError as err:
            err.agent = i
            raise
    return xs


def second_order_step(state: CoordinatorState, problem: ProblemInstance, rho):
    """One iteration with master-side BFGS curvature recovery."""
    xs = _solve_agents(problem, state, rho)
    grads = np.stack([recover_gradient(rho, state.z, xs[i], state.duals[i])
                      for i in range(problem.agent_count)])
    metrics = list(state.metrics)
    if state.prev_x is not None:
        # curvature pairs need the previous iterate and its recovered gradient
        for i in range(problem.agent_count):
            metrics[i] = bfgs_update(metrics[i], xs[i] - state.prev_x[i],
                                     grads[i] - state.prev_grads[i])
    z_new, duals_new = consensus_qp_closed_form(xs, metrics, grads)
    record = StepRecord(xs, grads, state.z, z_new, state.duals, duals_new, metrics)
    new_state = CoordinatorState(z_new, duals_new, metrics, prev_x=xs,
                                 prev_grads=grads, iteration=state.iteration + 1)
    return new_state, record


def first_order_step(state: CoordinatorState, problem: ProblemInstance, rho):
    """One iteration with the metric fixed at rho*I; averaging replaces the QP solve."""
    xs = _solve_agents(problem, state, rho)
    grads = np.stack([recover_gradient(rho, state.z, xs[i], state.duals[i])
                      for i in range(problem.agent_count)])
    z_new = np.mean(xs - grads / rho, axis=0)
    duals_new = rho * (xs - z_new) - grads
    record = StepRecord(xs, grads, state.z, z_new, state.duals, duals_new, state.metrics)
    new_state = CoordinatorState(z_new, duals_new, state.metrics, prev_x=xs,
                                 prev_grads=grads, iteration=state.iteration + 1)
    return new_state, record


def constant_metric_step(state: CoordinatorState, problem: ProblemInstance):
    """One iteration with fixed metrics; subproblems use the metric norm directly."""
    count, n = problem.agent_count, problem.dim
    xs = np.empty((count, n))
    for i, obj in enumerate(problem.objectives):
        try:
            xs[i] = local_solve_metric(obj, state.duals[i], state.z, state.metrics[i])
        except ConvergenceError as err:
            err.agent = i
            raise
    grads = np.stack([state.metrics[i] @ (state.z - xs[i]) - state.duals[i]
                      for i in range(count)])
    z_new, duals_new = consensus_qp_closed_form(xs, state.metrics, grads)
    record = StepRecord(xs, grads, state.z, z_new, state.duals, duals_new, state.metrics)
    new_state = CoordinatorState(z_new, duals_new, state.metrics, prev_x=xs,
                                 prev_grads=grads, iteration=state.iteration + 1)
    return new_state, record


def _trace_energy(variant, record, problem, rho):
    if problem.reference_z is None or problem.reference_duals is None:
        return float("nan")
    if variant == "constant_metric":
        return diagnostics.energy_constant_metric(
            record.z_new, record.duals_new, problem.reference_z,
            problem.reference_duals, record.metrics)
    return diagnostics.energy_decentralized(
        record.z_new, record.duals_new, problem.reference_z,
        problem.reference_duals, rho)


def run_centralized(problem: ProblemInstance, variant, rho, max_iters, tol=1e-10,
                    metrics=None, z0=None, duals0=None, seed=None,
                    record_hook=None) -> RunTrace:
    """Iterate a centralized variant until the global point settles.

    Budget exhaustion returns a trace flagged non-converged rather than
    raising. ``seed`` is recorded for provenance; the run itself is
    deterministic. ``record_hook`` receives each StepRecord, for tests.
    """
    if variant not in VARIANTS:
        raise InvalidInputError(f"variant must be one of {VARIANTS}, got {variant!r}")
    state = init_coordinator(problem, rho, z0=z0, duals0=duals0)
    if metrics is not None:
        if variant != "constant_metric":
            raise InvalidInputError("explicit metrics are only for the constant_metric variant")
        state.metrics = [np.asarray(m, float) for m in metrics]

    trace = RunTrace(metadata={
        "variant": variant, "rho": rho, "seed": seed, "tol": tol,
        "max_iters": max_iters, "problem": problem.label,
    })
    for k in range(1, max_iters + 1):
        started = time.perf_counter()
        if variant == "second_order":
            state, record = second_order_step(state, problem, rho)
        elif variant == "first_order":
            state, record = first_order_step(state, problem, rho)
        else:
            state, record = constant_metric_step(state, problem)
        elapsed_us = (time.perf_counter() - started) * 1e6
        if record_hook is not None:
            record_hook(record)
        error = (diagnostics.consensus_error_l1(record.xs, problem.reference_z)
                 if problem.reference_z is not None else float("nan"))
        trace.append(TraceRow(
            iteration=k,
            consensus_error_l1=error,
            energy=_trace_energy(variant, record, problem, rho),
            z_step_norm=float(np.linalg.norm(record.z_new - record.z_prev)),
            dual_sum_norm=float(np.linalg.norm(record.duals_new.sum(axis=0))),
            wall_time_us=elapsed_us,
        ))
        if np.linalg.norm(record.z_new - record.z_prev) <= tol:
            trace.converged = True
            break
    return trace
