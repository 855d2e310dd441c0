import logging
from dataclasses import dataclass, field
from enum import Enum

import networkx as nx
import numpy as np
import pandas as pd

from estimation.errors import (
    InvalidNodeError,
    InvalidParameterError,
    TopologyError,
)

logger = logging.getLogger(__name__)

MAX_TOPOLOGY_DRAWS = 100


class TopologyKind(str, Enum):
    EDGE_LIST = "edge-list"
    RING = "ring"
    PATH = "path"
    FULLY_CONNECTED = "fully-connected"
    RANDOM_GEOMETRIC = "random-geometric"


class WeightStrategy(str, Enum):
    UNIFORM = "uniform"
    METROPOLIS = "metropolis"
    RELATIVE_DEGREE = "relative-degree"
    RELATIVE_DEGREE_VARIANCE = "relative-degree-variance"


@dataclass(frozen=True)
class Network:
    """Undirected network of ``node_count`` nodes with 1-based ids.

    Parameters
    ----------
    node_count : int
        Number of nodes M.
    adjacency : iterable of pairs
        Unordered node-id pairs. Stored normalized as ``(min, max)``; self-loops
        and out-of-range ids are rejected, duplicates collapse.
    """

    node_count: int
    adjacency: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.node_count < 1:
            raise InvalidParameterError(f"node_count must be >= 1, got {self.node_count}")
        pairs = set()
        for k, l in self.adjacency:
            k, l = int(k), int(l)
            if k == l:
                raise TopologyError(f"self-loop on node {k}")
            for node in (k, l):
                if not 1 <= node <= self.node_count:
                    raise InvalidNodeError(f"node {node} outside [1, {self.node_count}]")
            pairs.add((min(k, l), max(k, l)))
        object.__setattr__(self, "adjacency", frozenset(pairs))
        neighbours = {k: set() for k in self.nodes}
        for k, l in pairs:
            neighbours[k].add(l)
            neighbours[l].add(k)
        object.__setattr__(
            self, "_neighbours", {k: frozenset(v) for k, v in neighbours.items()}
        )

    @property
    def nodes(self):
        return range(1, self.node_count + 1)

    def _check_node(self, k):
        if not 1 <= k <= self.node_count:
            raise InvalidNodeError(f"node {k} outside [1, {self.node_count}]")

    def degree(self, k):
        """Open-neighbourhood degree (self excluded)."""
        self._check_node(k)
        return len(self._neighbours[k])

    def to_networkx(self):
        graph = nx.Graph()
        graph.add_nodes_from(self.nodes)
        graph.add_edges_from(self.adjacency)
        return graph


def closed_neighbourhood(net, k):
    """Node ``k`` together with all nodes adjacent to it."""
    net._check_node(k)
    return frozenset(net._neighbours[k] | {k})


def is_connected(net):
    return nx.is_connected(net.to_networkx())


@dataclass(frozen=True)
class NeighbourWeights:
    """Row-stochastic weights: ``rows[k]`` is a tuple of ``(l, w_lk)`` over N_k, ascending l."""

    rows: dict

    def row(self, k):
        return self.rows[k]

    def weight(self, l, k):
        return dict(self.rows[k]).get(l, 0.0)

    def as_matrix(self):
        """M x M array with ``W[l-1, k-1] = w_lk`` (column k holds row k of the table)."""
        size = len(self.rows)
        matrix = np.zeros((size, size))
        for k, row in self.rows.items():
            for l, w in row:
                matrix[l - 1, k - 1] = w
        return matrix

    def to_frame(self):
        frame = pd.DataFrame(self.as_matrix().T)
        frame.index = [f"k={k}" for k in range(1, len(self.rows) + 1)]
        frame.columns = [f"l={l}" for l in range(1, len(self.rows) + 1)]
        return frame


def _from_row_values(net, values):
    rows = {}
    for k in net.nodes:
        members = sorted(closed_neighbourhood(net, k))
        rows[k] = tuple((l, float(values(k, l))) for l in members)
    return NeighbourWeights(rows)


def uniform_weights(net):
    return _from_row_values(
        net, lambda k, l: 1.0 / len(closed_neighbourhood(net, k))
    )


def metropolis_weights(net):
    """Metropolis rule on open degrees; the self weight absorbs the remainder."""
    rows = {}
    for k in net.nodes:
        d_k = net.degree(k)
        off_diagonal = {
            l: 1.0 / (1 + max(d_k, net.degree(l)))
            for l in closed_neighbourhood(net, k)
            if l != k
        }
        off_diagonal[k] = 1.0 - sum(off_diagonal.values())
        rows[k] = tuple(sorted(off_diagonal.items()))
    return NeighbourWeights(rows)


def relative_degree_weights(net):
    return relative_degree_variance_weights(net, np.ones(net.node_count))


def relative_degree_variance_weights(net, noise_vars):
    """Weights proportional to ``card(N_l) / noise_vars[l]`` over N_k.

    ``noise_vars`` is indexed by node id minus one.
    """
    noise_vars = np.asarray(noise_vars, dtype=float)
    if noise_vars.shape != (net.node_count,):
        raise InvalidParameterError(
            f"expected {net.node_count} noise variances, got shape {noise_vars.shape}"
        )
    if np.any(noise_vars <= 0):
        bad = [k for k in net.nodes if noise_vars[k - 1] <= 0]
        raise InvalidParameterError(f"noise variances must be > 0 (nodes {bad})")

    rows = {}
    for k in net.nodes:
        members = sorted(closed_neighbourhood(net, k))
        scores = [len(closed_neighbourhood(net, l)) / noise_vars[l - 1] for l in members]
        total = sum(scores)
        rows[k] = tuple((l, s / total) for l, s in zip(members, scores))
    return NeighbourWeights(rows)


def build_weights(net, strategy, noise_vars=None):
    strategy = WeightStrategy(strategy)
    logger.debug("materializing %s weights for %d nodes", strategy.value, net.node_count)
    if strategy is WeightStrategy.UNIFORM:
        return uniform_weights(net)
    if strategy is WeightStrategy.METROPOLIS:
        return metropolis_weights(net)
    if strategy is WeightStrategy.RELATIVE_DEGREE:
        return relative_degree_weights(net)
    if noise_vars is None:
        raise InvalidParameterError("relative-degree-variance weights need noise variances")
    return relative_degree_variance_weights(net, noise_vars)


@dataclass(frozen=True)
class TopologySpec:
    kind: TopologyKind
    node_count: int
    edges: tuple = ()
    radius: float = None

    def __post_init__(self):
        object.__setattr__(self, "kind", TopologyKind(self.kind))
        object.__setattr__(
            self, "edges", tuple(sorted((min(k, l), max(k, l)) for k, l in self.edges))
        )
        if self.kind is TopologyKind.RANDOM_GEOMETRIC:
            if self.radius is None or not 0 < self.radius <= np.sqrt(2):
                raise InvalidParameterError(
                    f"random-geometric radius must be in (0, sqrt 2], got {self.radius}"
                )


def read_edge_list(text):
    """Parse ``k l`` pairs, one per line; blank lines and ``#`` comments are skipped."""
    edges = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise TopologyError(f"line {lineno}: expected 'k l', got {line!r}")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise TopologyError(f"line {lineno}: node ids must be integers, got {line!r}")
    return edges


def _random_geometric(spec, rng):
    for attempt in range(1, MAX_TOPOLOGY_DRAWS + 1):
        positions = rng.uniform(0.0, 1.0, size=(spec.node_count, 2))
        graph = nx.random_geometric_graph(
            spec.node_count,
            spec.radius,
            pos={i: positions[i] for i in range(spec.node_count)},
        )
        if nx.is_connected(graph):
            logger.debug("random-geometric draw %d is connected", attempt)
            return [(i + 1, j + 1) for i, j in graph.edges()]
        logger.debug("random-geometric draw %d is disconnected, redrawing", attempt)
    raise TopologyError(
        f"no connected random-geometric graph with M={spec.node_count}, "
        f"radius={spec.radius} after {MAX_TOPOLOGY_DRAWS} draws"
    )


def build_topology(spec, rng=None):
    """Materialize a :class:`Network` from ``spec``.

    ``rng`` is a ``numpy.random.Generator``; only random-geometric topologies use it.
    """
    m = spec.node_count
    if spec.kind is TopologyKind.EDGE_LIST:
        edges = spec.edges
    elif spec.kind is TopologyKind.RING:
        edges = [] if m < 2 else [(u + 1, v + 1) for u, v in nx.cycle_graph(m).edges() if u != v]
    elif spec.kind is TopologyKind.PATH:
        edges = [(u + 1, v + 1) for u, v in nx.path_graph(m).edges()]
    elif spec.kind is TopologyKind.FULLY_CONNECTED:
        edges = [(u + 1, v + 1) for u, v in nx.complete_graph(m).edges()]
    else:
        if rng is None:
            raise InvalidParameterError("random-geometric topology needs a random generator")
        edges = _random_geometric(spec, rng)
    return Network(m, frozenset(edges))
