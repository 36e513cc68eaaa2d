"""Energy functions, error metrics, identity checkers, and rate fitting.

Everything here is pure: diagnostics read run data and never perturb it.
"""

import numpy as np

from .errors import DiagnosticUnavailableError, InvalidInputError


def _require_reference(z_star, dual_star):
    if z_star is None or dual_star is None:
        raise DiagnosticUnavailableError("reference solution is required for this diagnostic")


def energy_constant_metric(z, duals, z_star, dual_star, metrics) -> float:
    """Sum over agents of ||z - z*||^2_B + ||lam - lam*||^2_{B^{-1}}."""
    _require_reference(z_star, dual_star)
    z = np.asarray(z, float)
    total = 0.0
    for lam, lam_star, metric in zip(duals, dual_star, metrics):
        dz = z - z_star
        dl = np.asarray(lam, float) - np.asarray(lam_star, float)
        total += float(dz @ metric @ dz) + float(dl @ np.linalg.solve(metric, dl))
    return total


def energy_decentralized(z_est, duals, z_star, dual_star, rho) -> float:
    """rho*N*||z - z*||^2 + (1/rho) * sum ||lam_i - lam_i*||^2."""
    _require_reference(z_star, dual_star)
    if rho <= 0:
        raise InvalidInputError("rho must be positive")
    duals = np.asarray(duals, float)
    n_agents = duals.shape[0]
    dz = np.asarray(z_est, float) - np.asarray(z_star, float)
    dl = duals - np.asarray(dual_star, float)
    return rho * n_agents * float(dz @ dz) + float(np.sum(dl * dl)) / rho


def consensus_error_l1(xs, x_star) -> float:
    """Sum over agents of the l1 distance to the reference point."""
    if x_star is None:
        raise DiagnosticUnavailableError("reference solution is required for this diagnostic")
    x_star = np.asarray(x_star, float)
    return float(sum(np.sum(np.abs(np.asarray(x, float) - x_star)) for x in xs))


def check_midpoint_identity(xs, duals_prev, duals_new, z_prev, z_new, metrics=None, rho=None):
    """Max residual of x_i - 0.5*B_i^{-1}(lam_i' - lam_i) - 0.5*(z' + z).

    Pass either per-agent metrics or the scalar penalty rho (B = rho*I).
    ``z_prev``/``z_new`` may be single vectors or per-agent arrays.
    """
    if (metrics is None) == (rho is None):
        raise InvalidInputError("pass exactly one of metrics or rho")
    xs = np.asarray(xs, float)
    duals_prev = np.asarray(duals_prev, float)
    duals_new = np.asarray(duals_new, float)
    z_prev = np.asarray(z_prev, float)
    z_new = np.asarray(z_new, float)
    worst = 0.0
    for i in range(xs.shape[0]):
        dl = duals_new[i] - duals_prev[i]
        half = np.linalg.solve(metrics[i], dl) / 2.0 if metrics is not None else dl / (2.0 * rho)
        zp = z_prev[i] if z_prev.ndim == 2 else z_prev
        zn = z_new[i] if z_new.ndim == 2 else z_new
        residual = xs[i] - half - 0.5 * (zn + zp)
        worst = max(worst, float(np.linalg.norm(residual)))
    return worst


def detect_plateau(values, window=10, rel_range=0.05):
    """Index where the moving range first drops below rel_range of the value.

    Returns None when the series never flattens by that test.
    """
    values = np.asarray(values, float)
    for end in range(window - 1, values.size):
        chunk = values[end - window + 1 : end + 1]
        scale = abs(values[end])
        if scale > 0 and float(chunk.max() - chunk.min()) < rel_range * scale:
            return end - window + 1
    return None


def plateau_level(values, window=10, rel_range=0.05) -> float:
    """Mean of the flat tail; falls back to the last decile when nothing flattens."""
    values = np.asarray(values, float)
    if values.size == 0:
        raise DiagnosticUnavailableError("empty series")
    start = detect_plateau(values, window=window, rel_range=rel_range)
    if start is None:
        start = max(0, values.size - max(window, values.size // 10))
    return float(np.mean(values[start:]))


def fit_linear_rate(trace, column="energy", min_rows=10):
    """Least-squares fit of log(value) against iteration over the pre-plateau rows.

    Returns (per-iteration rate, R^2). The rate is exp(slope), so a
    geometric series value = c^k fits back c exactly.
    """
    iters = trace.column("iter")
    values = trace.column(column)
    keep = np.isfinite(values) & (values > 0)
    iters, values = iters[keep], values[keep]
    start = detect_plateau(values)
    # a series that is flat from the first row has no decaying segment to
    # exclude; fit it whole (a constant fits back rate 1.0)
    if start is not None and start > 0:
        iters, values = iters[:start], values[:start]
    if values.size < min_rows:
        raise DiagnosticUnavailableError(
            f"need at least {min_rows} positive pre-plateau rows, have {values.size}"
        )
    logs = np.log(values)
    slope, intercept = np.polyfit(iters, logs, 1)
    predicted = slope * iters + intercept
    ss_res = float(np.sum((logs - predicted) ** 2))
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(np.exp(slope)), r_squared
