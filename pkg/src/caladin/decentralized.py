"""Coordinator-free consensus ALADIN over digraphs with quantized links.

All cross-agent aggregation goes through the finite-time quantized
average consensus protocol, so every global quantity an agent holds is an
estimate that all agents share exactly, within one protocol guarantee of
the unquantized average. Sub-seeds for each protocol call are derived
from the run seed by a counter, which makes whole runs reproducible.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import diagnostics
from .centralized import StepRecord, bfgs_update
from .errors import ConvergenceError, InvalidInputError
from .fqac import fqac_run
from .graph import Digraph
from .objectives import ProblemInstance, QuadraticFormObjective, local_solve
from .trace import RunTrace, TraceRow

DIVERGENCE_FACTOR = 1e3

DECENTRALIZED_VARIANTS = ("qd_first_order", "bilevel", "approx_second_order")


@dataclass
class DecentralizedState:
    x: np.ndarray  # (N, n) local primals
    duals: np.ndarray  # (N, n) dual estimates
    z_est: np.ndarray  # (N, n) global-point estimates; identical rows after a step
    metrics: list = None  # per-agent curvature for the second-order variants
    inv_metric: np.ndarray = None  # shared inverse-curvature estimate
    prev_x: np.ndarray = None
    prev_grads: np.ndarray = None
    prev_avg_x: np.ndarray = None
    prev_avg_grad: np.ndarray = None
    run_seed: int = 0
    fqac_calls: int = 0
    inner_converged: bool = True

    def next_seed(self):
        seed = [self.run_seed, self.fqac_calls]
        self.fqac_calls += 1
        return seed


def init_decentralized(problem: ProblemInstance, rho, run_seed=0, init="zero",
                       z0=None, duals0=None) -> DecentralizedState:
    count, n = problem.agent_count, problem.dim
    if init == "zero":
        z_est = np.zeros((count, n))
        duals = np.zeros((count, n))
    elif init == "random":
        rng = np.random.default_rng(run_seed)
        z_est = rng.normal(size=(count, n))
        duals = rng.normal(size=(count, n))
    else:
        raise InvalidInputError(f"init must be 'zero' or 'random', got {init!r}")
    if z0 is not None:
        z_est = np.tile(np.asarray(z0, float), (count, 1))
    if duals0 is not None:
        duals = np.asarray(duals0, float).copy()
    metrics = [rho * np.eye(n) for _ in range(count)]
    # the inverse metric estimates the inverse of the averaged curvature,
    # whose scale is set by the objectives; tying it to 1/rho stalls the
    # rank-two learning whenever the penalty is large
    return DecentralizedState(
        x=np.zeros((count, n)), duals=duals, z_est=z_est, metrics=metrics,
        inv_metric=np.eye(n), run_seed=run_seed)


def _local_solves(problem, state, rho):
    xs = np.empty((problem.agent_count, problem.dim))
    for i, obj in enumerate(problem.objectives):
        try:
            xs[i] = local_solve(obj, state.duals[i], state.z_est[i], rho)
        except ConvergenceError as err:
            err.agent = i
            raise
    return xs


def qd_first_order_step(state: DecentralizedState, problem: ProblemInstance,
                        graph: Digraph, rho, level):
    """One first-order iteration: solve, recover, average via protocol, re-dualize."""
    xs = _local_solves(problem, state, rho)
    grads = rho * (state.z_est - xs) - state.duals
    carried = xs - grads / rho
    result = fqac_run(carried, graph, level, seed=state.next_seed())
    z_new = result.values
    duals_new = rho * (xs - z_new) - grads
    record = StepRecord(
        xs, grads, state.z_est, z_new, state.duals, duals_new, state.metrics,
        extras={
            "z_exact": carried.mean(axis=0),
            "fqac_rounds": result.rounds,
            "fqac_messages": result.mass_messages + result.flood_messages,
        })
    new_state = DecentralizedState(
        x=xs, duals=duals_new, z_est=z_new, metrics=state.metrics,
        inv_metric=state.inv_metric, prev_x=xs, prev_grads=grads,
        prev_avg_x=state.prev_avg_x, prev_avg_grad=state.prev_avg_grad,
        run_seed=state.run_seed, fqac_calls=state.fqac_calls)
    return new_state, record


def _updated_metrics(state, xs, grads):
    metrics = list(state.metrics)
    if state.prev_x is not None:
        for i in range(len(metrics)):
            metrics[i] = bfgs_update(metrics[i], xs[i] - state.prev_x[i],
                                     grads[i] - state.prev_grads[i])
    return metrics


def surrogate_penalty(metric) -> float:
    """Penalty for the surrogate consensus solve: geometric mean of the
    extreme eigenvalues, which roughly balances the contraction."""
    eigs = np.linalg.eigvalsh(metric)
    return float(np.sqrt(max(eigs[0], 1e-12) * max(eigs[-1], 1e-12)))


def _average_metric(metrics, graph, level, run_seed, fqac_calls):
    """Protocol-averaged metric: agents flood the stacked upper triangles
    of their matrices through one quantized averaging call."""
    dim = metrics[0].shape[0]
    rows, cols = np.triu_indices(dim)
    stacked = np.stack([m[rows, cols] for m in metrics])
    result = fqac_run(stacked, graph, level, seed=[run_seed, fqac_calls])
    averaged = np.zeros((dim, dim))
    averaged[rows, cols] = result.common
    averaged = averaged + np.triu(averaged, 1).T
    return averaged, result


def solve_quadratic_consensus(xs, metrics, grads, graph: Digraph, level, inner_tol,
                              z_init=None, duals_init=None, run_seed=0, fqac_calls=0,
                              check_every=5, inner_max=1000, penalty=None):
    """Solve the coordination QP for uploaded (x_i, B_i, g_i) with the
    quantized decentralized first-order iteration over quadratic surrogates.

    The QP objective is redistributed so every surrogate carries the
    protocol-averaged metric with the agent's own linear term; the sum is
    unchanged, so the minimizer is the closed-form coordination point, but
    the iteration's contraction is set by the averaged metric's spectrum
    instead of the worst per-agent one (individual curvature estimates
    develop near-null directions on non-convex problems, which would stall
    a first-order solve). Per-agent duals are recovered from the agent's
    own metric at the solution, matching the closed-form dual equation.

    Stops when global estimates sampled ``check_every`` iterations apart
    move by at most ``inner_tol``; exhaustion of ``inner_max`` is reported
    via the ``converged`` flag.
    """
    if inner_tol <= 0:
        raise InvalidInputError("inner_tol must be positive")
    xs = np.asarray(xs, float)
    grads = np.asarray(grads, float)
    count, dim = xs.shape

    averaged, avg_result = _average_metric(metrics, graph, level, run_seed, fqac_calls)
    rounds = avg_result.rounds
    messages = avg_result.mass_messages + avg_result.flood_messages
    # linear terms b_i = B_i x_i - g_i; surrogate gradient is Bbar w - b_i
    origin = np.zeros(dim)
    surrogates = [QuadraticFormObjective(averaged, origin, -(metrics[i] @ xs[i] - grads[i]))
                  for i in range(count)]
    inner_problem = ProblemInstance(surrogates, dim)
    penalty = surrogate_penalty(averaged) if penalty is None else penalty
    inner_state = DecentralizedState(
        x=np.zeros_like(xs),
        duals=np.zeros_like(xs) if duals_init is None else np.asarray(duals_init, float).copy(),
        z_est=np.zeros_like(xs) if z_init is None else np.asarray(z_init, float).copy(),
        metrics=None, inv_metric=None, run_seed=run_seed, fqac_calls=fqac_calls + 1)

    snapshot = None
    converged = False
    iterations = 0
    for r in range(1, inner_max + 1):
        inner_state, inner_record = qd_first_order_step(
            inner_state, inner_problem, graph, penalty, level)
        rounds += inner_record.extras["fqac_rounds"]
        messages += inner_record.extras["fqac_messages"]
        iterations = r
        if r == 1:
            snapshot = inner_state.z_est[0].copy()
        elif (r - 1) % check_every == 0:
            current = inner_state.z_est[0]
            if np.linalg.norm(current - snapshot) <= inner_tol:
                converged = True
                break
            snapshot = current.copy()

    duals = np.stack([metrics[i] @ (xs[i] - inner_state.z_est[i]) - grads[i]
                      for i in range(count)])
    return {
        "z_est": inner_state.z_est,
        "duals": duals,
        "iterations": iterations,
        "converged": converged,
        "fqac_rounds": rounds,
        "fqac_messages": messages,
        "fqac_calls": inner_state.fqac_calls,
        "penalty": penalty,
    }


def bilevel_step(state: DecentralizedState, problem: ProblemInstance, graph: Digraph,
                 rho, level, inner_tol, inner_check_every=5, inner_max=1000,
                 warm_start_duals=False):
    """One outer iteration with the coordination QP for the refreshed
    curvature metrics solved by the quantized first-order iteration."""
    xs = _local_solves(problem, state, rho)
    grads = rho * (state.z_est - xs) - state.duals
    metrics = _updated_metrics(state, xs, grads)

    inner = solve_quadratic_consensus(
        xs, metrics, grads, graph, level, inner_tol,
        z_init=state.z_est,
        duals_init=state.duals if warm_start_duals else None,
        run_seed=state.run_seed, fqac_calls=state.fqac_calls,
        check_every=inner_check_every, inner_max=inner_max)

    z_new = inner["z_est"]
    duals_new = inner["duals"]
    record = StepRecord(
        xs, grads, state.z_est, z_new, state.duals, duals_new, metrics,
        extras={
            "fqac_rounds": inner["fqac_rounds"],
            "fqac_messages": inner["fqac_messages"],
            "inner_iterations": inner["iterations"],
            "inner_converged": inner["converged"],
            "inner_rho": inner["penalty"],
        })
    new_state = DecentralizedState(
        x=xs, duals=duals_new, z_est=z_new, metrics=metrics,
        inv_metric=state.inv_metric, prev_x=xs, prev_grads=grads,
        run_seed=state.run_seed, fqac_calls=inner["fqac_calls"],
        inner_converged=inner["converged"])
    return new_state, record


def inverse_bfgs_update(inv_metric, s, y, curvature_rtol=1e-12) -> np.ndarray:
    """Rank-two update of an inverse-curvature estimate; satisfies H'y = s.

    Skipped when the curvature y.s is not safely positive.
    """
    s = np.asarray(s, float)
    y = np.asarray(y, float)
    sy = float(y @ s)
    if sy <= curvature_rtol * float(np.linalg.norm(s) * np.linalg.norm(y)):
        return inv_metric
    n = s.size
    left = np.eye(n) - np.outer(s, y) / sy
    updated = left @ inv_metric @ left.T + np.outer(s, s) / sy
    updated = 0.5 * (updated + updated.T)
    try:
        np.linalg.cholesky(updated)
    except np.linalg.LinAlgError:
        return inv_metric
    return updated


def approx_second_order_step(state: DecentralizedState, problem: ProblemInstance,
                             graph: Digraph, rho, level):
    """One iteration of the averaging-based second-order variant.

    Primal variables and gradients are averaged through the protocol, the
    shared inverse-curvature estimate is refreshed from their increments,
    and the global estimate takes a quasi-Newton step on the averaged
    gradient.
    """
    xs = _local_solves(problem, state, rho)
    grads = rho * (state.z_est - xs) - state.duals
    metrics = _updated_metrics(state, xs, grads)

    avg_result = fqac_run(xs, graph, level, seed=state.next_seed())
    avg_x = avg_result.common
    grads_at_avg = np.stack([obj.gradient(avg_x) for obj in problem.objectives])
    grad_result = fqac_run(grads_at_avg, graph, level, seed=state.next_seed())
    avg_grad = grad_result.common

    inv_metric = state.inv_metric
    if state.prev_avg_x is not None:
        inv_metric = inverse_bfgs_update(inv_metric, avg_x - state.prev_avg_x,
                                         avg_grad - state.prev_avg_grad)

    z_row = avg_x - inv_metric @ avg_grad
    z_new = np.tile(z_row, (problem.agent_count, 1))
    duals_new = np.stack([metrics[i] @ (xs[i] - z_row) - grads[i]
                          for i in range(problem.agent_count)])
    # the dual update runs through the metrics, so the dual-sum bound is
    # reported at both the penalty scale and the metric scale
    metric_scale = max(float(np.linalg.norm(m, 2)) for m in metrics)
    record = StepRecord(
        xs, grads, state.z_est, z_new, state.duals, duals_new, metrics,
        extras={
            "fqac_rounds": avg_result.rounds + grad_result.rounds,
            "fqac_messages": (avg_result.mass_messages + avg_result.flood_messages
                              + grad_result.mass_messages + grad_result.flood_messages),
            "avg_x": avg_x,
            "avg_grad": avg_grad,
            "dual_scale_rho": rho,
            "dual_scale_metric": max(rho, metric_scale),
        })
    new_state = DecentralizedState(
        x=xs, duals=duals_new, z_est=z_new, metrics=metrics, inv_metric=inv_metric,
        prev_x=xs, prev_grads=grads, prev_avg_x=avg_x, prev_avg_grad=avg_grad,
        run_seed=state.run_seed, fqac_calls=state.fqac_calls)
    return new_state, record


def _row_from_record(k, record, problem, rho, elapsed_us):
    z_row_new = record.z_new[0]
    z_row_prev = record.z_prev[0]
    if problem.reference_z is not None:
        error = diagnostics.consensus_error_l1(record.xs, problem.reference_z)
        energy = diagnostics.energy_decentralized(
            z_row_new, record.duals_new, problem.reference_z,
            problem.reference_duals, rho)
    else:
        error = energy = float("nan")
    disagreement = float(np.max(np.abs(record.z_new - z_row_new))) if record.z_new.ndim == 2 else 0.0
    return TraceRow(
        iteration=k,
        consensus_error_l1=error,
        energy=energy,
        z_step_norm=float(np.linalg.norm(z_row_new - z_row_prev)),
        dual_sum_norm=float(np.linalg.norm(record.duals_new.sum(axis=0))),
        wall_time_us=elapsed_us,
        fqac_rounds=record.extras.get("fqac_rounds"),
        fqac_messages=record.extras.get("fqac_messages"),
        max_z_disagreement=disagreement,
    )


def _finite(record):
    return (np.all(np.isfinite(record.z_new)) and np.all(np.isfinite(record.duals_new))
            and np.all(np.isfinite(record.xs)))


def _run_decentralized(problem, graph, rho, level, iters, seed, step, tol=None,
                       init="zero", z0=None, duals0=None, metadata=None,
                       record_hook=None, catch_solver_errors=False) -> RunTrace:
    state = init_decentralized(problem, rho, run_seed=seed, init=init, z0=z0, duals0=duals0)
    trace = RunTrace(decentralized=True, metadata=dict(metadata or {}))
    initial_error = None
    inner_always_converged = True
    for k in range(1, iters + 1):
        started = time.perf_counter()
        try:
            state, record = step(state)
        except ConvergenceError as err:
            if not catch_solver_errors:
                raise
            trace.diverged = True
            trace.metadata["divergence"] = f"local solve failed at iteration {k}: {err}"
            break
        elapsed_us = (time.perf_counter() - started) * 1e6
        if record_hook is not None:
            record_hook(record)
        inner_always_converged &= state.inner_converged
        row = _row_from_record(k, record, problem, rho, elapsed_us)
        trace.append(row)
        if not _finite(record):
            trace.diverged = True
            trace.metadata["divergence"] = f"non-finite iterate at iteration {k}"
            break
        if initial_error is None and np.isfinite(row.consensus_error_l1):
            initial_error = row.consensus_error_l1
        if (initial_error is not None
                and row.consensus_error_l1 > DIVERGENCE_FACTOR * max(initial_error, 1e-30)):
            trace.diverged = True
            trace.metadata["divergence"] = (
                f"consensus error exceeded {DIVERGENCE_FACTOR:g} x initial at iteration {k}")
            break
        if tol is not None and row.z_step_norm <= tol:
            trace.converged = True
            break
    if not inner_always_converged:
        trace.metadata["inner_converged"] = False
    return trace


def run_qd_first_order(problem: ProblemInstance, graph: Digraph, rho, level, iters,
                       seed=0, tol=None, init="zero", z0=None, duals0=None,
                       record_hook=None) -> RunTrace:
    """Fixed-budget run of the quantized decentralized first-order iteration."""
    meta = {"variant": "qd_first_order", "rho": rho, "level": level, "seed": seed,
            "iters": iters, "problem": problem.label}
    return _run_decentralized(
        problem, graph, rho, level, iters, seed,
        lambda st: qd_first_order_step(st, problem, graph, rho, level),
        tol=tol, init=init, z0=z0, duals0=duals0, metadata=meta, record_hook=record_hook)


def run_bilevel(problem: ProblemInstance, graph: Digraph, rho, level, inner_tol, iters,
                seed=0, tol=None, init="zero", z0=None, duals0=None,
                inner_check_every=5, inner_max=1000, warm_start_duals=False,
                record_hook=None) -> RunTrace:
    meta = {"variant": "bilevel", "rho": rho, "level": level, "inner_tol": inner_tol,
            "seed": seed, "iters": iters, "problem": problem.label}
    return _run_decentralized(
        problem, graph, rho, level, iters, seed,
        lambda st: bilevel_step(st, problem, graph, rho, level, inner_tol,
                                inner_check_every=inner_check_every,
                                inner_max=inner_max,
                                warm_start_duals=warm_start_duals),
        tol=tol, init=init, z0=z0, duals0=duals0, metadata=meta, record_hook=record_hook)


def run_approx_second_order(problem: ProblemInstance, graph: Digraph, rho, level, iters,
                            seed=0, tol=None, init="zero", z0=None, duals0=None,
                            record_hook=None) -> RunTrace:
    """Averaging-based second-order run; instability is flagged, never raised.

    Coarse quantization can destabilize the inverse-curvature estimate, so
    solver failures and error blow-ups end the run with ``diverged`` set.
    """
    meta = {"variant": "approx_second_order", "rho": rho, "level": level, "seed": seed,
            "iters": iters, "problem": problem.label}
    return _run_decentralized(
        problem, graph, rho, level, iters, seed,
        lambda st: approx_second_order_step(st, problem, graph, rho, level),
        tol=tol, init=init, z0=z0, duals0=duals0, metadata=meta,
        record_hook=record_hook, catch_solver_errors=True)
