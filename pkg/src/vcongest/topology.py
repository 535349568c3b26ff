"""Communication graphs for the simulator, chiefly the clique chain G(n, k).

G(n, k) is a chain of n/k cliques of size k where every two consecutive
cliques are joined by a perfect matching. Node ids of clique ``i`` (1-based)
are ``(i-1)*k .. i*k-1``. With the default identity matching the node at
offset ``l`` inside its clique belongs to layer ``l+1``.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_flow, shortest_path

__all__ = [
    "GnkLabels",
    "Topology",
    "TopologyError",
    "build_gnk",
    "complete_graph",
    "path_graph",
    "from_edges",
    "vertex_connectivity",
    "diameter",
    "distance_matrix",
    "write_edge_list",
    "read_edge_list",
]

CONNECTIVITY_ORACLE_LIMIT = 512


class TopologyError(ValueError):
    """Raised for invalid graph parameters or malformed graph files."""


@dataclass(frozen=True)
class GnkLabels:
    """Clique and layer labels of a G(n, k) instance (both 1-based)."""

    k: int
    clique_of: tuple[int, ...]
    layer_of: tuple[int, ...]

    @property
    def num_cliques(self) -> int:
        return len(self.clique_of) // self.k

    def clique_members(self, i: int) -> list[int]:
        return [u for u, c in enumerate(self.clique_of) if c == i]

    def validate(self) -> None:
        n = len(self.clique_of)
        if self.k < 1 or n % self.k:
            raise TopologyError(f"k={self.k} does not divide n={n}")
        seen = set()
        for u in range(n):
            c, l = self.clique_of[u], self.layer_of[u]
            if not (1 <= c <= n // self.k and 1 <= l <= self.k):
                raise TopologyError(f"node {u} has out-of-range label ({c}, {l})")
            if (c, l) in seen:
                raise TopologyError(f"label ({c}, {l}) used twice")
            seen.add((c, l))


@dataclass(frozen=True)
class Topology:
    """Immutable undirected simple graph on nodes ``0..node_count-1``."""

    node_count: int
    adjacency: tuple[tuple[int, ...], ...]
    labels: GnkLabels | None = None

    def __post_init__(self) -> None:
        if self.node_count < 1:
            raise TopologyError("node_count must be positive")
        if len(self.adjacency) != self.node_count:
            raise TopologyError("adjacency length differs from node_count")
        for u, nbrs in enumerate(self.adjacency):
            if list(nbrs) != sorted(set(nbrs)):
                raise TopologyError(f"neighbors of {u} must be sorted and unique")
            for v in nbrs:
                if not 0 <= v < self.node_count:
                    raise TopologyError(f"edge ({u}, {v}) leaves the node range")
                if v == u:
                    raise TopologyError(f"self-loop at {u}")
                if u not in self.adjacency[v]:
                    raise TopologyError(f"edge ({u}, {v}) is not symmetric")
        if self.labels is not None:
            if len(self.labels.clique_of) != self.node_count:
                raise TopologyError("labels do not cover every node")
            self.labels.validate()

    def neighbors(self, u: int) -> tuple[int, ...]:
        return self.adjacency[u]

    def degree(self, u: int) -> int:
        return len(self.adjacency[u])

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges as ``(u, v)`` with ``u < v``, sorted."""
        return [(u, v) for u, nbrs in enumerate(self.adjacency) for v in nbrs if u < v]

    def directed_arcs(self) -> tuple[np.ndarray, np.ndarray]:
        """Both orientations of every edge as parallel ``(src, dst)`` arrays."""
        src = [u for u, nbrs in enumerate(self.adjacency) for _ in nbrs]
        dst = [v for nbrs in self.adjacency for v in nbrs]
        return np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)

    def is_complete(self) -> bool:
        return all(len(nbrs) == self.node_count - 1 for nbrs in self.adjacency)

    def sparse(self) -> csr_matrix:
        src, dst = self.directed_arcs()
        data = np.ones(len(src), dtype=np.int32)
        return csr_matrix((data, (src, dst)), shape=(self.node_count, self.node_count))


def from_edges(n: int, edges: Iterable[tuple[int, int]], labels: GnkLabels | None = None) -> Topology:
    nbrs: list[set[int]] = [set() for _ in range(n)]
    for u, v in edges:
        if u == v:
            raise TopologyError(f"self-loop at {u}")
        if not (0 <= u < n and 0 <= v < n):
            raise TopologyError(f"edge ({u}, {v}) leaves the node range 0..{n - 1}")
        nbrs[u].add(v)
        nbrs[v].add(u)
    return Topology(n, tuple(tuple(sorted(s)) for s in nbrs), labels)


def complete_graph(n: int) -> Topology:
    return from_edges(n, ((u, v) for u in range(n) for v in range(u + 1, n)))


def path_graph(n: int) -> Topology:
    return from_edges(n, ((u, u + 1) for u in range(n - 1)))


def build_gnk(n: int, k: int, matchings: Sequence[Sequence[int]] | None = None) -> Topology:
    """Build G(n, k).

    ``matchings`` optionally gives one permutation of ``range(k)`` per pair of
    consecutive cliques: offset ``l`` of clique ``i`` is joined to offset
    ``matchings[i-1][l]`` of clique ``i+1``. Layers are then traced along the
    matching paths starting from clique 1. The default is the identity.
    """
    if k < 2:
        raise TopologyError(f"k must be at least 2, got {k}")
    if n < k or n % k:
        raise TopologyError(f"k={k} must divide n={n}")
    m = n // k
    if matchings is None:
        matchings = [list(range(k))] * (m - 1)
    if len(matchings) != m - 1:
        raise TopologyError(f"expected {m - 1} matchings, got {len(matchings)}")
    for perm in matchings:
        if sorted(perm) != list(range(k)):
            raise TopologyError(f"matching {list(perm)} is not a permutation of range({k})")

    edges = []
    for c in range(m):
        base = c * k
        edges.extend((base + a, base + b) for a in range(k) for b in range(a + 1, k))
    for c, perm in enumerate(matchings):
        edges.extend((c * k + l, (c + 1) * k + perm[l]) for l in range(k))

    clique_of = [u // k + 1 for u in range(n)]
    layer_of = [0] * n
    offsets = list(range(k))  # current offset of each layer's path
    for c in range(m):
        for layer, off in enumerate(offsets):
            layer_of[c * k + off] = layer + 1
        if c < m - 1:
            offsets = [matchings[c][off] for off in offsets]
    return from_edges(n, edges, GnkLabels(k, tuple(clique_of), tuple(layer_of)))


def vertex_connectivity(t: Topology, limit: int = CONNECTIVITY_ORACLE_LIMIT) -> int:
    """Exact vertex connectivity by unit-capacity max-flow on the split graph.

    Meant as a test oracle: cost grows like ``(k+1) * n`` max-flow calls.
    Complete graphs return ``n - 1``; disconnected graphs return 0.
    """
    n = t.node_count
    if n > limit:
        raise TopologyError(f"connectivity oracle is capped at {limit} nodes, got {n}")
    if t.is_complete():
        return n - 1
    if not _connected(t):
        return 0

    # node v -> v_in = 2v, v_out = 2v+1 with an arc of capacity 1 between them;
    # each edge becomes two arcs of capacity n (effectively infinite).
    rows, cols, caps = [], [], []
    for v in range(n):
        rows.append(2 * v)
        cols.append(2 * v + 1)
        caps.append(1)
    for u, v in t.edges():
        rows += [2 * u + 1, 2 * v + 1]
        cols += [2 * v, 2 * u]
        caps += [n, n]
    graph = csr_matrix(
        (np.asarray(caps, dtype=np.int32), (rows, cols)), shape=(2 * n, 2 * n)
    )

    best = n - 1
    i = 0
    # Even's argument: some vertex among the first best+1 avoids a minimum cut,
    # and the far side of that cut holds a vertex of larger index.
    while i <= best and i < n:
        adj = set(t.adjacency[i])
        for j in range(i + 1, n):
            if j in adj:
                continue
            flow = maximum_flow(graph, 2 * i + 1, 2 * j).flow_value
            best = min(best, flow)
        i += 1
    return best


def distance_matrix(t: Topology) -> np.ndarray:
    """All-pairs hop distances (``-1`` for unreachable pairs)."""
    d = shortest_path(t.sparse(), method="D", unweighted=True, directed=False)
    out = np.where(np.isinf(d), -1, d).astype(np.int64)
    return out


def diameter(t: Topology) -> int:
    d = distance_matrix(t)
    if (d < 0).any():
        raise TopologyError("diameter is undefined for a disconnected graph")
    return int(d.max())


def _connected(t: Topology) -> bool:
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in t.adjacency[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == t.node_count


def write_edge_list(t: Topology, path: str | Path) -> None:
    """Write ``n k`` (k=0 when unlabeled) followed by one ``u v`` line per edge."""
    k = t.labels.k if t.labels is not None else 0
    lines = [f"{t.node_count} {k}"] + [f"{u} {v}" for u, v in t.edges()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edge_list(path: str | Path) -> Topology:
    """Parse the edge-list format; labeled files are rebuilt as G(n, k).

    A labeled file must describe a G(n, k) instance: its edges are checked
    against the chain structure and the matchings are recovered from them.
    """
    lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or len(lines[0]) != 2:
        raise TopologyError(f"{path}: first line must be 'n k'")
    try:
        n, k = int(lines[0][0]), int(lines[0][1])
        edges = [(int(a), int(b)) for a, b in lines[1:]]
    except ValueError as exc:
        raise TopologyError(f"{path}: non-integer token") from exc
    if k == 0:
        return from_edges(n, edges)
    plain = from_edges(n, edges)
    m = n // k if k and n % k == 0 else 0
    matchings = []
    for c in range(m - 1):
        perm = []
        for l in range(k):
            nxt = [v - (c + 1) * k for v in plain.adjacency[c * k + l] if (c + 1) * k <= v < (c + 2) * k]
            if len(nxt) != 1:
                raise TopologyError(f"{path}: node {c * k + l} lacks a unique matching edge")
            perm.append(nxt[0])
        matchings.append(perm)
    rebuilt = build_gnk(n, k, matchings)
    if rebuilt.adjacency != plain.adjacency:
        raise TopologyError(f"{path}: edges do not form G({n}, {k})")
    return rebuilt
