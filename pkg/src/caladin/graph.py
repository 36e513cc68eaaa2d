"""Directed communication topologies.

Graphs are immutable after construction and always validated to be
strongly connected, with the exact diameter computed by all-pairs BFS.
Self-loops are dropped from the stored edge set; the consensus protocol
adds its own virtual self-edge where it needs one.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, TopologyError


@dataclass(frozen=True)
class Digraph:
    agent_count: int
    edges: frozenset
    out_neighbors: tuple
    in_neighbors: tuple
    diameter: int = field(default=0)

    @property
    def out_degrees(self):
        return tuple(len(nb) for nb in self.out_neighbors)


def _bfs_distances(start, neighbors, count):
    dist = [-1] * count
    dist[start] = 0
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in neighbors[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def build_digraph(agent_count: int, edge_list) -> Digraph:
    """Validate an edge list and return a strongly connected digraph.

    Raises TopologyError naming one unreachable ordered pair when the
    graph is not strongly connected.
    """
    if agent_count < 1:
        raise InvalidInputError(f"agent_count must be at least 1, got {agent_count}")
    edges = set()
    for a, b in edge_list:
        a, b = int(a), int(b)
        if not (0 <= a < agent_count and 0 <= b < agent_count):
            raise InvalidInputError(f"edge ({a}, {b}) out of range for {agent_count} agents")
        if a != b:
            edges.add((a, b))

    out_nb = [[] for _ in range(agent_count)]
    in_nb = [[] for _ in range(agent_count)]
    for a, b in sorted(edges):
        out_nb[a].append(b)
        in_nb[b].append(a)
    out_nb = tuple(tuple(nb) for nb in out_nb)
    in_nb = tuple(tuple(nb) for nb in in_nb)

    forward = _bfs_distances(0, out_nb, agent_count)
    if min(forward) < 0:
        j = forward.index(-1)
        raise TopologyError(f"not strongly connected: no directed path from 0 to {j}")
    backward = _bfs_distances(0, in_nb, agent_count)
    if min(backward) < 0:
        j = backward.index(-1)
        raise TopologyError(f"not strongly connected: no directed path from {j} to 0")

    diameter = 0
    for start in range(agent_count):
        dist = _bfs_distances(start, out_nb, agent_count)
        diameter = max(diameter, max(dist))

    return Digraph(agent_count, frozenset(edges), out_nb, in_nb, diameter)


def ring_digraph(agent_count: int) -> Digraph:
    """Directed ring 0 -> 1 -> ... -> N-1 -> 0."""
    return build_digraph(
        agent_count, [(i, (i + 1) % agent_count) for i in range(agent_count)]
    )


def complete_digraph(agent_count: int) -> Digraph:
    return build_digraph(
        agent_count,
        [(i, j) for i in range(agent_count) for j in range(agent_count) if i != j],
    )


def random_strongly_connected(agent_count: int, extra_edge_probability: float, seed) -> Digraph:
    """Directed ring backbone plus Bernoulli extra edges.

    The backbone guarantees strong connectivity for any probability;
    the result is deterministic for a fixed seed.
    """
    if not 0.0 <= extra_edge_probability <= 1.0:
        raise InvalidInputError("extra_edge_probability must lie in [0, 1]")
    if agent_count < 2:
        raise InvalidInputError("random generation needs at least 2 agents")
    rng = np.random.default_rng(seed)
    draws = rng.random((agent_count, agent_count))
    edges = {(i, (i + 1) % agent_count) for i in range(agent_count)}
    for i in range(agent_count):
        for j in range(agent_count):
            if i != j and draws[i, j] < extra_edge_probability:
                edges.add((i, j))
    return build_digraph(agent_count, edges)


def diameter(g: Digraph) -> int:
    return g.diameter


def format_edge_list(g: Digraph) -> str:
    return "\n".join(f"{a} {b}" for a, b in sorted(g.edges))


def parse_edge_list(text: str):
    """Parse one "from to" pair per line; blank lines and # comments ignored."""
    pairs = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InvalidInputError(f"malformed edge line: {raw!r}")
        pairs.append((int(parts[0]), int(parts[1])))
    return pairs
