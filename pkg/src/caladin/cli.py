"""Command-line entry point.

Subcommands: gen-problem, run, compare, fqac-demo. Exit codes from run
follow the runner outcome: 0 converged, 2 budget exhausted, 3 flagged
divergence, 1 any error.
"""

import argparse
import sys

import numpy as np

from .errors import CaladinError
from .experiments import (
    ExperimentConfig,
    compare_runs,
    exit_code,
    format_comparison,
    gen_convex_ls,
    gen_sensor,
    load_config,
    run_experiment,
    save_problem,
)
from .fqac import fqac_run
from .graph import random_strongly_connected
from .quantization import QuantizerConfig, quantize


def _build_parser():
    parser = argparse.ArgumentParser(prog="caladin",
                                     description="Consensus ALADIN experiment harness")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-problem", help="generate and save a problem instance")
    gen.add_argument("--kind", choices=("convex_ls", "sensor"), default="convex_ls")
    gen.add_argument("--agents", type=int, default=20)
    gen.add_argument("--dimension", type=int, default=10)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--output", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", help="config file; flags below override its keys")
    run.add_argument("--problem", choices=("convex_ls", "sensor"))
    run.add_argument("--problem-file")
    run.add_argument("--agents", type=int)
    run.add_argument("--dimension", type=int)
    run.add_argument("--data-seed", type=int)
    run.add_argument("--topology", choices=("random", "ring", "complete", "edges"))
    run.add_argument("--extra-edge-probability", type=float)
    run.add_argument("--topology-seed", type=int)
    run.add_argument("--variant")
    run.add_argument("--rho", type=float)
    run.add_argument("--quantization-level", type=float)
    run.add_argument("--inner-tol", type=float)
    run.add_argument("--max-iters", type=int)
    run.add_argument("--tol", type=float)
    run.add_argument("--init", choices=("zero", "random"))
    run.add_argument("--run-seed", type=int)
    run.add_argument("--output")

    cmp_cmd = sub.add_parser("compare", help="summarize persisted trace CSVs")
    cmp_cmd.add_argument("traces", nargs="+")
    cmp_cmd.add_argument("--threshold", type=float, default=1e-6)

    demo = sub.add_parser("fqac-demo", help="one quantized averaging run on a random digraph")
    demo.add_argument("--agents", type=int, default=8)
    demo.add_argument("--dimension", type=int, default=2)
    demo.add_argument("--level", type=float, default=1e-2)
    demo.add_argument("--extra-edge-probability", type=float, default=0.3)
    demo.add_argument("--seed", type=int, default=0)
    return parser


_RUN_OVERRIDES = {
    "problem": "problem",
    "problem_file": "problem_file",
    "agents": "agents",
    "dimension": "dimension",
    "data_seed": "data_seed",
    "topology": "topology",
    "extra_edge_probability": "extra_edge_probability",
    "topology_seed": "topology_seed",
    "variant": "variant",
    "rho": "rho",
    "quantization_level": "quantization_level",
    "inner_tol": "inner_tol",
    "max_iters": "max_iters",
    "tol": "tol",
    "init": "init",
    "run_seed": "run_seed",
    "output": "output",
}


def _cmd_gen_problem(args):
    if args.kind == "convex_ls":
        problem = gen_convex_ls(args.agents, args.dimension, args.seed)
    else:
        problem = gen_sensor(args.agents, args.seed)
    save_problem(args.output, problem)
    print(f"wrote {problem.label} to {args.output}")
    return 0


def _cmd_run(args):
    config = load_config(args.config) if args.config else ExperimentConfig()
    for arg_name, field_name in _RUN_OVERRIDES.items():
        value = getattr(args, arg_name)
        if value is not None:
            setattr(config, field_name, value)
    trace = run_experiment(config)
    final = trace.rows[-1].consensus_error_l1 if trace.rows else float("nan")
    status = "converged" if trace.converged else ("diverged" if trace.diverged else "budget exhausted")
    print(f"{config.variant}: {len(trace.rows)} iterations, final consensus error {final:.3e}, {status}")
    if config.output:
        print(f"trace written to {config.output}")
    return exit_code(trace)


def _cmd_compare(args):
    rows = compare_runs(args.traces, threshold=args.threshold)
    print(format_comparison(rows))
    return 0


def _cmd_fqac_demo(args):
    graph = random_strongly_connected(args.agents, args.extra_edge_probability, args.seed)
    rng = np.random.default_rng(args.seed)
    values = rng.normal(size=(args.agents, args.dimension))
    result = fqac_run(values, graph, args.level, seed=args.seed)
    target = np.mean(quantize(values, QuantizerConfig(args.level)), axis=0)
    deviation = float(np.max(np.abs(result.common - target)))
    print(f"digraph: {args.agents} agents, diameter {graph.diameter}")
    print(f"terminated after {result.rounds} rounds "
          f"({result.mass_messages} mass messages, {result.flood_messages} flood messages)")
    print(f"common output: {np.array2string(result.common, precision=6)}")
    print(f"|output - quantized mean| = {deviation:.3e} (level {args.level:g})")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "gen-problem": _cmd_gen_problem,
        "run": _cmd_run,
        "compare": _cmd_compare,
        "fqac-demo": _cmd_fqac_demo,
    }
    try:
        return handlers[args.command](args)
    except (CaladinError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
