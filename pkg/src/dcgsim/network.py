"""Communication graphs: random geometric networks, connectivity, hop diameter."""
import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import Disconnected

RANGE_ATOL = 1e-12


@dataclass(frozen=True)
class Network:
    """Undirected graph over agents ``0..n-1``.

    ``adjacency[i]`` is the sorted tuple of neighbor ids of agent ``i``.
    ``positions`` is ``None`` for abstract graphs, otherwise an ``(n, dim)``
    tuple of coordinate tuples.
    """

    n: int
    dim: int
    adjacency: tuple
    positions: tuple = None
    reception_range: float = float("nan")

    def __post_init__(self):
        if len(self.adjacency) != self.n:
            raise ValueError("adjacency must have one entry per agent")
        for i, nbrs in enumerate(self.adjacency):
            if i in nbrs:
                raise ValueError(f"self-loop at agent {i}")
            if list(nbrs) != sorted(set(nbrs)):
                raise ValueError(f"neighbors of agent {i} must be sorted and unique")
            for j in nbrs:
                if not 0 <= j < self.n or i not in self.adjacency[j]:
                    raise ValueError(f"edge ({i}, {j}) is not symmetric")

    def neighbors(self, i):
        return self.adjacency[i]

    @property
    def edges(self):
        return [(i, j) for i, nbrs in enumerate(self.adjacency) for j in nbrs if i < j]

    def position_array(self):
        if self.positions is None:
            raise ValueError("network has no embedded positions")
        return np.array(self.positions, dtype=float)

    def subgraph_hops(self, source):
        """Breadth-first hop counts from ``source`` (``-1`` when unreachable)."""
        hops = [-1] * self.n
        hops[source] = 0
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for v in self.adjacency[u]:
                if hops[v] < 0:
                    hops[v] = hops[u] + 1
                    queue.append(v)
        return hops

    def to_json(self):
        doc = {
            "n": self.n,
            "dim": self.dim,
            "reception_range": self.reception_range,
            "positions": None if self.positions is None else [list(p) for p in self.positions],
            "adjacency": [list(nbrs) for nbrs in self.adjacency],
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        positions = doc.get("positions")
        return cls(
            n=int(doc["n"]),
            dim=int(doc["dim"]),
            adjacency=tuple(tuple(int(j) for j in nbrs) for nbrs in doc["adjacency"]),
            positions=None if positions is None else tuple(tuple(map(float, p)) for p in positions),
            reception_range=float(doc["reception_range"]) if doc.get("reception_range") is not None else float("nan"),
        )


def from_edges(n, edges, dim=2):
    """Abstract network (no positions) from an edge list."""
    nbrs = [set() for _ in range(n)]
    for i, j in edges:
        if i == j:
            raise ValueError(f"self-loop at agent {i}")
        nbrs[i].add(j)
        nbrs[j].add(i)
    return Network(n=n, dim=dim, adjacency=tuple(tuple(sorted(s)) for s in nbrs))


def from_positions(positions, reception_range):
    """Unit-disk graph: ``(i, j)`` is an edge iff ``|p_i - p_j| <= reception_range``."""
    pts = np.asarray(positions, dtype=float)
    n, dim = pts.shape
    dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1))
    within = dist <= reception_range + RANGE_ATOL
    np.fill_diagonal(within, False)
    adjacency = tuple(tuple(int(j) for j in np.flatnonzero(row)) for row in within)
    return Network(
        n=n,
        dim=dim,
        adjacency=adjacency,
        positions=tuple(tuple(float(c) for c in p) for p in pts),
        reception_range=float(reception_range),
    )


def generate_geometric_network(n, dim, reception_range, seed):
    """Uniform i.i.d. points in the unit hypercube joined by the range rule.

    Connectivity is not enforced; callers check :func:`is_connected` and
    resample with another seed if needed.
    """
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    if n < dim + 2:
        raise ValueError(f"need at least dim + 2 = {dim + 2} agents, got {n}")
    if not reception_range > 0:
        raise ValueError("reception_range must be positive")
    rng = np.random.default_rng(seed)
    return from_positions(rng.uniform(0.0, 1.0, size=(n, dim)), reception_range)


def is_connected(net):
    if net.n == 0:
        return True
    return min(net.subgraph_hops(0)) >= 0


def hop_diameter(net):
    """Exact hop diameter H (largest BFS eccentricity)."""
    if not is_connected(net):
        raise Disconnected("hop diameter is undefined on a disconnected network")
    return max((max(net.subgraph_hops(s)) for s in range(net.n)), default=0)


def hop_distances(net):
    """All-pairs hop-count matrix (``-1`` for unreachable pairs)."""
    return np.array([net.subgraph_hops(s) for s in range(net.n)], dtype=int)


def random_connected_network(n, seed, extra_edge_prob=0.15, dim=2):
    """Abstract connected graph: a random recursive tree (agent ``i`` attaches
    to a uniformly chosen earlier agent) plus every other pair independently
    with probability ``extra_edge_prob``."""
    if n < 1:
        raise ValueError("need at least one agent")
    rng = np.random.default_rng(seed)
    edges = [(int(rng.integers(0, i)), i) for i in range(1, n)]
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < extra_edge_prob:
                edges.append((i, j))
    return from_edges(n, edges, dim=dim)
