"""Experiment configuration, problem generation, execution, and comparison.

A run is exactly reproducible from its config file: every seed and every
resolved default is recorded in the JSON sidecar written next to the
trace CSV.
"""

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__ as _version
from .centralized import VARIANTS as CENTRALIZED_VARIANTS
from .centralized import run_centralized
from .decentralized import (
    DECENTRALIZED_VARIANTS,
    run_approx_second_order,
    run_bilevel,
    run_qd_first_order,
)
from .diagnostics import plateau_level
from .errors import ConfigError, InvalidInputError, TraceSchemaError
from .graph import (
    Digraph,
    build_digraph,
    complete_digraph,
    format_edge_list,
    parse_edge_list,
    random_strongly_connected,
    ring_digraph,
)
from .objectives import ProblemInstance, QuadraticObjective, SensorObjective, reference_solution
from .trace import RunTrace, read_trace_csv, sidecar_path

ALL_VARIANTS = CENTRALIZED_VARIANTS + DECENTRALIZED_VARIANTS

PROBLEM_KINDS = ("convex_ls", "sensor")
TOPOLOGY_KINDS = ("random", "ring", "complete", "edges")
SENSOR_BLOCK = 10


# ---------------------------------------------------------------------------
# problem generation


def gen_convex_ls(agents: int, dimension: int, seed) -> ProblemInstance:
    """Least-squares consensus instance with seeded Gaussian targets.

    The optimum is the exact sample mean of the targets.
    """
    rng = np.random.default_rng(seed)
    targets = rng.normal(size=(agents, dimension))
    objectives = [QuadraticObjective(t) for t in targets]
    problem = ProblemInstance(
        objectives, dimension,
        label=f"convex_ls-N{agents}-n{dimension}-seed{seed}",
        meta={"kind": "convex_ls", "agents": agents, "dimension": dimension,
              "data_seed": int(seed)})
    problem.reference_z, problem.reference_duals = reference_solution(problem)
    return problem


def gen_sensor(agents: int, seed, block: int = SENSOR_BLOCK) -> ProblemInstance:
    """Non-convex sensor-allocation instance (two coupled blocks per agent).

    All data is seeded standard Gaussian; the reference point comes from a
    high-accuracy centralized Newton solve started at the data mean.
    """
    rng = np.random.default_rng(seed)
    target_a = rng.normal(size=(agents, block))
    target_b = rng.normal(size=(agents, block))
    coupling = rng.normal(size=(agents, block))
    objectives = [SensorObjective(target_a[i], target_b[i], coupling[i])
                  for i in range(agents)]
    problem = ProblemInstance(
        objectives, 2 * block,
        label=f"sensor-N{agents}-seed{seed}",
        meta={"kind": "sensor", "agents": agents, "dimension": 2 * block,
              "data_seed": int(seed)})
    x0 = np.concatenate([target_a.mean(axis=0), target_b.mean(axis=0)])
    problem.reference_z, problem.reference_duals = reference_solution(problem, x0=x0)
    return problem


def save_problem(path, problem: ProblemInstance) -> None:
    """Serialize an instance, data vectors included, to a key-value text file."""
    kind = problem.meta.get("kind")
    lines = [f"kind = {kind}",
             f"agents = {problem.agent_count}",
             f"dimension = {problem.dim}",
             f"data_seed = {problem.meta.get('data_seed', 0)}"]

    def vec(values):
        return " ".join(repr(float(v)) for v in values)

    for i, obj in enumerate(problem.objectives):
        if isinstance(obj, QuadraticObjective):
            lines.append(f"target {i}: {vec(obj.target)}")
        elif isinstance(obj, SensorObjective):
            lines.append(f"target_a {i}: {vec(obj.target_a)}")
            lines.append(f"target_b {i}: {vec(obj.target_b)}")
            lines.append(f"coupling {i}: {vec(obj.coupling)}")
        else:
            raise InvalidInputError(f"cannot serialize objective of type {type(obj).__name__}")
    if problem.reference_z is not None:
        lines.append(f"reference: {vec(problem.reference_z)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_problem(path) -> ProblemInstance:
    text = Path(path).read_text()
    scalars = {}
    blocks = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" in line and "=" not in line.split(":", 1)[0]:
            head, payload = line.split(":", 1)
            blocks[head.strip()] = np.array([float(v) for v in payload.split()])
        elif "=" in line:
            key, value = (part.strip() for part in line.split("=", 1))
            scalars[key] = value
        else:
            raise ConfigError(f"malformed problem line: {raw!r}")
    kind = scalars.get("kind")
    agents = int(scalars.get("agents", 0))
    dimension = int(scalars.get("dimension", 0))
    if kind == "convex_ls":
        objectives = [QuadraticObjective(blocks[f"target {i}"]) for i in range(agents)]
    elif kind == "sensor":
        objectives = [SensorObjective(blocks[f"target_a {i}"], blocks[f"target_b {i}"],
                                      blocks[f"coupling {i}"]) for i in range(agents)]
    else:
        raise ConfigError(f"unknown problem kind {kind!r}")
    problem = ProblemInstance(
        objectives, dimension,
        label=f"{kind}-N{agents}-file",
        meta={"kind": kind, "agents": agents, "dimension": dimension,
              "data_seed": int(scalars.get("data_seed", 0))})
    if "reference" in blocks:
        problem.reference_z = blocks["reference"]
        problem.reference_duals = np.stack([-o.gradient(problem.reference_z)
                                            for o in objectives])
    else:
        problem.reference_z, problem.reference_duals = reference_solution(problem)
    return problem


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    problem: str = "convex_ls"
    agents: int = 20
    dimension: int = 10
    data_seed: int = 0
    problem_file: str = None

    topology: str = "random"
    extra_edge_probability: float = 0.2
    topology_seed: int = 0
    edges: list = None

    variant: str = "first_order"
    rho: float = 1.0
    quantization_level: float = None
    inner_tol: float = 1e-8
    inner_max: int = 1000
    inner_check_every: int = 5
    warm_start_inner_duals: bool = False
    max_iters: int = 500
    tol: float = None
    init: str = "zero"
    run_seed: int = 0
    output: str = None

    @property
    def decentralized(self) -> bool:
        return self.variant in DECENTRALIZED_VARIANTS

    def validate(self) -> None:
        if self.variant not in ALL_VARIANTS:
            raise ConfigError(f"variant must be one of {ALL_VARIANTS}, got {self.variant!r}")
        if self.problem not in PROBLEM_KINDS and self.problem_file is None:
            raise ConfigError(f"problem must be one of {PROBLEM_KINDS}, got {self.problem!r}")
        if self.problem == "sensor" and self.problem_file is None:
            # the sensor instance has a fixed block structure
            self.dimension = 2 * SENSOR_BLOCK
        if self.decentralized:
            if self.quantization_level is None:
                raise ConfigError(f"variant {self.variant!r} requires quantization_level")
            if self.quantization_level <= 0:
                raise ConfigError("quantization_level must be positive")
        elif self.quantization_level is not None:
            raise ConfigError(
                f"quantization_level only applies to decentralized variants, not {self.variant!r}")
        if self.rho <= 0:
            raise ConfigError("rho must be positive")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be nonnegative")
        if self.topology not in TOPOLOGY_KINDS:
            raise ConfigError(f"topology must be one of {TOPOLOGY_KINDS}")
        if self.topology == "edges" and not self.edges:
            raise ConfigError("topology 'edges' needs an edges block")
        if not 0.0 <= self.extra_edge_probability <= 1.0:
            raise ConfigError("extra_edge_probability must lie in [0, 1]")
        if self.init not in ("zero", "random"):
            raise ConfigError("init must be 'zero' or 'random'")
        for name in ("data_seed", "topology_seed", "run_seed"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be a nonnegative integer")

    def resolved(self) -> dict:
        out = dataclasses.asdict(self)
        out["edges"] = [list(e) for e in self.edges] if self.edges else None
        return out


_BOOL_KEYS = {"warm_start_inner_duals"}
_INT_KEYS = {"agents", "dimension", "data_seed", "topology_seed", "run_seed",
             "max_iters", "inner_max", "inner_check_every"}
_FLOAT_KEYS = {"extra_edge_probability", "rho", "quantization_level", "inner_tol", "tol"}
_STR_KEYS = {"problem", "problem_file", "topology", "variant", "init", "output"}


def parse_config(text: str) -> ExperimentConfig:
    """Parse the key-value config format; an ``edges:`` block, one
    "from to" pair per line, may close the file."""
    config = ExperimentConfig()
    lines = text.splitlines()
    edge_lines = None
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if edge_lines is not None:
            edge_lines.append(line)
            continue
        if line == "edges:":
            edge_lines = []
            continue
        if "=" not in line:
            raise ConfigError(f"malformed config line: {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if value.lower() in ("", "none"):
            value_parsed = None
        elif key in _BOOL_KEYS:
            value_parsed = value.lower() in ("1", "true", "yes")
        elif key in _INT_KEYS:
            value_parsed = int(value)
        elif key in _FLOAT_KEYS:
            value_parsed = float(value)
        elif key in _STR_KEYS:
            value_parsed = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(config, key, value_parsed)
    if edge_lines is not None:
        config.edges = parse_edge_list("\n".join(edge_lines))
    return config


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def build_topology(config: ExperimentConfig) -> Digraph:
    if config.topology == "ring":
        return ring_digraph(config.agents)
    if config.topology == "complete":
        return complete_digraph(config.agents)
    if config.topology == "edges":
        return build_digraph(config.agents, config.edges)
    return random_strongly_connected(config.agents, config.extra_edge_probability,
                                     config.topology_seed)


def build_problem(config: ExperimentConfig) -> ProblemInstance:
    if config.problem_file is not None:
        return load_problem(config.problem_file)
    if config.problem == "convex_ls":
        return gen_convex_ls(config.agents, config.dimension, config.data_seed)
    return gen_sensor(config.agents, config.data_seed)


# ---------------------------------------------------------------------------
# execution


def run_experiment(config: ExperimentConfig) -> RunTrace:
    """Dispatch to the configured variant, persist trace and sidecar."""
    config.validate()
    problem = build_problem(config)
    centralized_tol = config.tol if config.tol is not None else 1e-10

    if config.decentralized:
        graph = build_topology(config)
        common = dict(seed=config.run_seed, tol=config.tol, init=config.init)
        if config.variant == "qd_first_order":
            trace = run_qd_first_order(problem, graph, config.rho, config.quantization_level,
                                       config.max_iters, **common)
        elif config.variant == "bilevel":
            trace = run_bilevel(problem, graph, config.rho, config.quantization_level,
                                config.inner_tol, config.max_iters,
                                inner_check_every=config.inner_check_every,
                                inner_max=config.inner_max,
                                warm_start_duals=config.warm_start_inner_duals, **common)
        else:
            trace = run_approx_second_order(problem, graph, config.rho,
                                            config.quantization_level, config.max_iters,
                                            **common)
        trace.metadata["graph_edges"] = format_edge_list(graph).splitlines()
        trace.metadata["graph_diameter"] = graph.diameter
    else:
        trace = run_centralized(problem, config.variant, config.rho, config.max_iters,
                                tol=centralized_tol, seed=config.run_seed)

    trace.metadata.update(config.resolved())
    trace.metadata["problem_label"] = problem.label
    trace.metadata["package_version"] = _version
    # descriptive variable counts: N local primal blocks plus the global
    # point, and one dual block per agent
    trace.metadata["primal_variable_count"] = problem.agent_count * problem.dim + problem.dim
    trace.metadata["dual_variable_count"] = problem.agent_count * problem.dim

    if config.output is not None:
        trace.write_csv(config.output)
        trace.write_metadata(sidecar_path(config.output))
    return trace


def exit_code(trace: RunTrace) -> int:
    """0 converged, 2 budget exhausted, 3 flagged divergence."""
    if trace.diverged:
        return 3
    if trace.converged:
        return 0
    return 2


# ---------------------------------------------------------------------------
# comparison


def compare_runs(paths, threshold=1e-6) -> list:
    """Summaries of persisted traces: final error, plateau, iterations to
    reach the threshold, and protocol message counts."""
    if not paths:
        raise InvalidInputError("no trace files given")
    rows = []
    for path in paths:
        trace = read_trace_csv(path)
        if not trace.rows:
            raise TraceSchemaError(f"{path} carries no rows")
        errors = trace.column("consensus_error_l1")
        iters = trace.column("iter")
        below = np.nonzero(errors <= threshold)[0]
        messages = None
        if trace.decentralized:
            messages = int(np.nansum(trace.column("fqac_messages")))
        rows.append({
            "path": str(path),
            "label": Path(path).stem,
            "final_error": float(errors[-1]),
            "plateau": plateau_level(errors),
            "iters_to_threshold": int(iters[below[0]]) if below.size else None,
            "iterations": len(trace.rows),
            "messages": messages,
            "converged": trace.converged,
            "diverged": trace.diverged,
        })
    return rows


def format_comparison(rows) -> str:
    headers = ["label", "final_error", "plateau", "iters_to_threshold", "messages"]
    table = [headers]
    for row in rows:
        table.append([
            row["label"],
            f"{row['final_error']:.3e}",
            f"{row['plateau']:.3e}",
            str(row["iters_to_threshold"]) if row["iters_to_threshold"] is not None else "-",
            str(row["messages"]) if row["messages"] is not None else "-",
        ])
    widths = [max(len(line[i]) for line in table) for i in range(len(headers))]
    rendered = []
    for line in table:
        rendered.append("  ".join(cell.ljust(width) for cell, width in zip(line, widths)))
    return "\n".join(rendered)
