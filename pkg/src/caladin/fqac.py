"""Finite-time quantized average consensus over a digraph.

Synchronous, seeded message-passing rounds. Each agent starts with twice
its value's integer lattice index as mass and a piece count of two. Every
round it keeps one piece of its mass and scatters the rest, one floored
quotient per piece, to out-neighbors (or itself) chosen uniformly at
random. Ceil/floor quotient extrema are flooded over windows of one graph
diameter; when a window's starting extrema agree to at most one lattice
step everywhere, every agent outputs the flooded floor quotient scaled
back to value units, so all outputs are identical.

Mass is conserved exactly: the componentwise mass total and the piece
count total (2N) never change.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, ProtocolError
from .graph import Digraph
from .quantization import QuantizerConfig, to_integer_lattice

ROUND_CAP = 1_000_000


@dataclass
class FqacState:
    """Cohort protocol state; row i holds agent i's view.

    mass: (N, n) int64 lattice masses; count: (N,) piece credits;
    window_max / window_min: (N, n) flooded quotient extrema.
    """

    mass: np.ndarray
    count: np.ndarray
    window_max: np.ndarray
    window_min: np.ndarray


@dataclass
class Counters:
    mass_messages: int = 0
    flood_messages: int = 0


@dataclass
class FqacResult:
    values: np.ndarray  # (N, n); identical rows
    rounds: int
    mass_messages: int
    flood_messages: int

    @property
    def common(self) -> np.ndarray:
        if not np.all(self.values == self.values[0]):
            raise ProtocolError("agents terminated with differing outputs")
        return self.values[0]


def _ceil_div(a, b):
    return -((-a) // b)


class _GraphOps:
    """Per-run cache of graph index arrays for the round hot path."""

    def __init__(self, graph: Digraph):
        count = graph.agent_count
        width = 1 + max((len(nb) for nb in graph.in_neighbors), default=0)
        # row i: agent i itself, its in-neighbors, padded with i (idempotent
        # under max/min)
        self.flood = np.full((count, width), 0, dtype=np.intp)
        for i in range(count):
            row = [i, *graph.in_neighbors[i]]
            row += [i] * (width - len(row))
            self.flood[i] = row
        self.targets = [np.array([*graph.out_neighbors[i], i], dtype=np.intp)
                        for i in range(count)]
        self.edge_count = sum(len(nb) for nb in graph.out_neighbors)


def fqac_init(values, graph: Digraph, cfg: QuantizerConfig) -> FqacState:
    values = np.atleast_2d(np.asarray(values, float))
    if values.shape[0] != graph.agent_count:
        raise InvalidInputError("one value vector per agent is required")
    mass = 2 * to_integer_lattice(values, cfg)
    count = np.full(graph.agent_count, 2, dtype=np.int64)
    shape = mass.shape
    return FqacState(mass=mass, count=count,
                     window_max=np.zeros(shape, dtype=np.int64),
                     window_min=np.zeros(shape, dtype=np.int64))


def fqac_round(state: FqacState, graph: Digraph, t: int, window: int, rng,
               counters: Counters = None, transcript=None, ops: "_GraphOps" = None) -> None:
    """Advance the protocol by one synchronous time step (in place)."""
    if ops is None:
        ops = _GraphOps(graph)
    n_agents = state.mass.shape[0]
    mass = state.mass
    count = state.count

    # window bookkeeping: refresh extrema on the first step of each window
    if (t - 1) % window == 0:
        counts = count[:, None]
        state.window_min = mass // counts
        state.window_max = _ceil_div(mass, counts)

    # synchronous max/min flooding of the extrema over in-neighbors + self
    state.window_max = state.window_max[ops.flood].max(axis=1)
    state.window_min = state.window_min[ops.flood].min(axis=1)
    if counters is not None:
        counters.flood_messages += ops.edge_count

    # mass splitting: keep one piece, scatter the rest
    recv_mass = np.zeros_like(mass)
    recv_count = np.zeros_like(count)
    for i in range(n_agents):
        pieces = int(count[i]) - 1
        if pieces <= 0:
            continue
        targets = ops.targets[i]
        choices = rng.integers(0, targets.size, size=pieces)
        row = mass[i]
        remaining = int(count[i])
        for pick in choices:
            piece = row // remaining
            row -= piece
            remaining -= 1
            dest = targets[pick]
            recv_mass[dest] += piece
            recv_count[dest] += 1
            if counters is not None and dest != i:
                counters.mass_messages += 1
            if transcript is not None:
                transcript.append((t, i, dest, piece.copy()))
        count[i] = remaining
    mass += recv_mass
    count += recv_count


def window_settled(state: FqacState) -> bool:
    """True when every agent's flooded extrema differ by at most one step."""
    return bool(np.all(state.window_max - state.window_min <= 1))


def fqac_run(values, graph: Digraph, level, window=None, seed=None,
             max_rounds=ROUND_CAP, on_round=None, transcript_path=None) -> FqacResult:
    """Run the protocol to termination and return every agent's output.

    ``window`` defaults to the graph diameter (floored at one round).
    ``seed`` may be anything numpy's default_rng accepts; a fixed seed
    reproduces the run exactly. ``on_round(t, state)`` is a test hook.
    """
    cfg = QuantizerConfig(level)
    state = fqac_init(values, graph, cfg)
    if window is None:
        window = max(1, graph.diameter)
    if window < 1:
        raise InvalidInputError("window must be at least one round")
    rng = np.random.default_rng(seed)
    counters = Counters()
    transcript = [] if transcript_path is not None else None
    ops = _GraphOps(graph)

    for t in range(1, max_rounds + 1):
        fqac_round(state, graph, t, window, rng, counters, transcript, ops=ops)
        if on_round is not None:
            on_round(t, state)
        if t % window == 0 and window_settled(state):
            if transcript_path is not None:
                _write_transcript(transcript_path, transcript)
            outputs = state.window_min.astype(float) * cfg.level
            return FqacResult(values=outputs, rounds=t,
                              mass_messages=counters.mass_messages,
                              flood_messages=counters.flood_messages)
    raise ProtocolError(f"no termination within {max_rounds} rounds")


def _write_transcript(path, entries):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["round", "sender", "receiver", "count", "mass"])
        for t, sender, dest, piece in entries:
            writer.writerow([t, sender, dest, 1, " ".join(str(v) for v in piece)])
