"""Consensus ALADIN: centralized and quantized decentralized consensus solvers.

The package splits into quantization primitives, directed topologies, local
objectives with their augmented subproblem solver, a coordinator-based solver
family, a finite-time quantized averaging protocol, the coordinator-free
solver family built on it, convergence diagnostics, and an experiment
harness with a CLI.
"""

from .centralized import (
    CoordinatorState,
    StepRecord,
    bfgs_update,
    consensus_qp_closed_form,
    constant_metric_step,
    first_order_step,
    init_coordinator,
    recover_gradient,
    run_centralized,
    second_order_step,
)
from .decentralized import (
    DecentralizedState,
    approx_second_order_step,
    bilevel_step,
    init_decentralized,
    inverse_bfgs_update,
    qd_first_order_step,
    run_approx_second_order,
    run_bilevel,
    run_qd_first_order,
    solve_quadratic_consensus,
)
from .diagnostics import (
    check_midpoint_identity,
    consensus_error_l1,
    detect_plateau,
    energy_constant_metric,
    energy_decentralized,
    fit_linear_rate,
    plateau_level,
)
from .errors import (
    CaladinError,
    ConfigError,
    ConvergenceError,
    DiagnosticUnavailableError,
    InvalidInputError,
    LatticeRangeError,
    OracleError,
    ProtocolError,
    TopologyError,
    TraceSchemaError,
)
from .fqac import FqacResult, FqacState, fqac_init, fqac_round, fqac_run, window_settled
from .graph import (
    Digraph,
    build_digraph,
    complete_digraph,
    diameter,
    format_edge_list,
    parse_edge_list,
    random_strongly_connected,
    ring_digraph,
)
from .objectives import (
    LocalObjective,
    ProblemInstance,
    QuadraticFormObjective,
    QuadraticObjective,
    SensorObjective,
    local_solve,
    local_solve_metric,
    reference_solution,
)
from .quantization import QuantizerConfig, quantize, to_integer_lattice
from .trace import RunTrace, TraceRow, read_trace_csv, sidecar_path

__version__ = "0.1.0"
