"""Undirected graphs on vertices 0..n-1 with geodesic (hop-count) queries.

Distances are BFS hop counts. Graphs with at most ``ALL_PAIRS_LIMIT`` vertices
keep an all-pairs distance table; larger graphs answer queries by BFS.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path
from scipy.spatial import cKDTree

ALL_PAIRS_LIMIT = 4096
MAX_RGG_DRAWS = 100
UNREACHED = -1


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph stored as sorted neighbor lists."""

    n: int
    adjacency: tuple[np.ndarray, ...] = field(repr=False)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]]) -> "Graph":
        if n < 1:
            raise GraphError("graph needs at least one vertex")
        nbrs: list[set[int]] = [set() for _ in range(n)]
        for u, v in edges:
            u, v = int(u), int(v)
            if not (0 <= u < n and 0 <= v < n):
                raise GraphError(f"edge ({u}, {v}) out of range for n={n}")
            if u == v:
                raise GraphError(f"self-loop at {u}")
            nbrs[u].add(v)
            nbrs[v].add(u)
        adjacency = tuple(np.array(sorted(s), dtype=np.int64) for s in nbrs)
        return cls(n, adjacency)

    def edges(self) -> list[tuple[int, int]]:
        return [(u, int(v)) for u in range(self.n) for v in self.adjacency[u] if u < v]

    def neighbors(self, i: int) -> np.ndarray:
        self._check(i)
        return self.adjacency[i]

    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self.adjacency], dtype=np.int64)

    @cached_property
    def adjacency_matrix(self) -> sp.csr_array:
        rows = np.repeat(np.arange(self.n), self.degrees())
        cols = np.concatenate(self.adjacency) if self.n else np.empty(0, np.int64)
        data = np.ones(len(cols))
        return sp.csr_array((data, (rows, cols)), shape=(self.n, self.n))

    @cached_property
    def distance_table(self) -> np.ndarray | None:
        """All-pairs hop distances (int32), or None above ALL_PAIRS_LIMIT."""
        if self.n > ALL_PAIRS_LIMIT:
            return None
        d = shortest_path(self.adjacency_matrix, method="D", unweighted=True)
        out = np.full(d.shape, UNREACHED, dtype=np.int32)
        finite = np.isfinite(d)
        out[finite] = d[finite].astype(np.int32)
        return out

    def _check(self, i: int) -> None:
        if not (0 <= int(i) < self.n):
            raise GraphError(f"vertex {i} out of range for n={self.n}")

    def bfs(self, sources: Iterable[int], cutoff: int | None = None) -> np.ndarray:
        """Hop distance from the source set to every vertex.

        Vertices farther than ``cutoff`` (or unreachable) get ``UNREACHED``.
        """
        dist = np.full(self.n, UNREACHED, dtype=np.int64)
        queue: deque[int] = deque()
        for s in sources:
            self._check(s)
            if dist[s] != 0:
                dist[s] = 0
                queue.append(int(s))
        while queue:
            u = queue.popleft()
            du = dist[u]
            if cutoff is not None and du >= cutoff:
                continue
            for v in self.adjacency[u]:
                if dist[v] == UNREACHED:
                    dist[v] = du + 1
                    queue.append(int(v))
        return dist

    def is_connected(self) -> bool:
        return bool(np.all(self.bfs([0]) != UNREACHED))

    def diameter(self) -> int:
        if not self.is_connected():
            raise GraphError("diameter of a disconnected graph is infinite")
        table = self.distance_table
        if table is not None:
            return int(table.max())
        return max(int(block.max()) for _, block in distance_rows(self, np.arange(self.n)))


def geodesic_distance(g: Graph, i: int, j: int) -> int:
    """Number of edges on a shortest path between ``i`` and ``j``."""
    g._check(i)
    g._check(j)
    table = g.distance_table
    d = int(table[i, j]) if table is not None else int(g.bfs([i])[j])
    if d == UNREACHED:
        raise GraphError(f"vertices {i} and {j} are disconnected")
    return d


def ball(g: Graph, i: int, radius: int) -> np.ndarray:
    """Sorted vertices within ``radius`` hops of ``i``."""
    return ball_of_set(g, [i], radius)


def ball_of_set(g: Graph, sources: Iterable[int], radius: int) -> np.ndarray:
    """Sorted vertices within ``radius`` hops of some vertex in ``sources``."""
    if radius < 0:
        raise GraphError("radius must be nonnegative")
    dist = g.bfs(sources, cutoff=radius)
    return np.flatnonzero(dist != UNREACHED)


@dataclass(frozen=True)
class GrowthEstimate:
    """Polynomial growth constants: |B(i,R)| <= density * (R+1)**dimension."""

    dimension: float
    density: float


def distance_rows(g: Graph, sources, chunk: int = 512):
    """Yield (sources, hop-distance block) pairs, ``chunk`` sources at a time."""
    sources = np.asarray(sources, dtype=np.int64)
    table = g.distance_table
    for start in range(0, len(sources), chunk):
        idx = sources[start:start + chunk]
        if table is not None:
            yield idx, table[idx]
            continue
        d = shortest_path(g.adjacency_matrix, method="D", unweighted=True, indices=idx)
        out = np.full(d.shape, UNREACHED, dtype=np.int32)
        finite = np.isfinite(d)
        out[finite] = d[finite].astype(np.int32)
        yield idx, out


def _ball_sizes(block: np.ndarray, width: int) -> np.ndarray:
    if np.any(block == UNREACHED):
        raise GraphError("growth profile needs a connected graph")
    counts = np.zeros((block.shape[0], width), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(block.shape[0]), block.shape[1]), block.ravel()), 1)
    return np.cumsum(counts, axis=1)


def ball_size_profile(g: Graph) -> np.ndarray:
    """``sizes[i, R] = |B(i, R)|`` for R = 0..diameter."""
    width = g.diameter() + 1
    return np.vstack([_ball_sizes(block, width) for _, block in distance_rows(g, np.arange(g.n))])


def estimate_growth(g: Graph, dimension: float = 2.0) -> GrowthEstimate:
    """Smallest density making the growth bound hold for every (i, R)."""
    if dimension <= 0:
        raise GraphError("dimension must be positive")
    density = 0.0
    for _, block in distance_rows(g, np.arange(g.n)):
        width = int(block.max()) + 1
        sizes = _ball_sizes(block, width)
        radii = np.arange(width, dtype=float)
        density = max(density, float(np.max(sizes / (radii + 1.0) ** dimension)))
    return GrowthEstimate(float(dimension), density)


def geodesic_width(g: Graph, matrix, row_vertices=None, col_vertices=None) -> int:
    """Largest hop distance between the row and column vertex of a nonzero entry.

    ``row_vertices[r]`` / ``col_vertices[c]`` embed matrix indices into the
    graph; both default to the identity.
    """
    coo = sp.coo_array(matrix)
    mask = coo.data != 0
    rows, cols = coo.row[mask], coo.col[mask]
    if rows.size == 0:
        return 0
    rv = np.asarray(row_vertices)[rows] if row_vertices is not None else rows
    cv = np.asarray(col_vertices)[cols] if col_vertices is not None else cols
    table = g.distance_table
    if table is not None:
        d = table[rv, cv]
    else:
        d = np.empty(len(rv), dtype=np.int64)
        for idx, block in distance_rows(g, np.unique(rv)):
            for pos, u in enumerate(idx):
                sel = rv == u
                d[sel] = block[pos, cv[sel]]
    if np.any(d == UNREACHED):
        raise GraphError("nonzero entry couples disconnected vertices")
    return int(d.max())


def laplacian(g: Graph) -> sp.csr_array:
    """Combinatorial Laplacian D - Adj."""
    adj = g.adjacency_matrix
    lap = sp.diags_array(g.degrees().astype(float)) - adj
    return sp.csr_array(lap)


def connectivity_radius(n: int) -> float:
    """Edge threshold sqrt(3 log(n) / n) for random geometric graphs."""
    return math.sqrt(3.0 * math.log(n) / n)


def random_geometric_graph(n: int, seed: int) -> tuple[Graph, np.ndarray]:
    """Connected random geometric graph on ``n`` uniform points in the unit square.

    Points come from ``np.random.default_rng(seed)`` as one ``random((n, 2))``
    draw (x then y per vertex, vertices in index order). Two vertices are
    adjacent iff their Euclidean distance is strictly below
    ``connectivity_radius(n)``. Disconnected draws are discarded and redrawn
    from the same stream, at most ``MAX_RGG_DRAWS`` times.
    """
    if n < 2:
        raise GraphError("random geometric graph needs n >= 2")
    rng = np.random.default_rng(seed)
    tau = connectivity_radius(n)
    for _ in range(MAX_RGG_DRAWS):
        pos = rng.random((n, 2))
        pairs = cKDTree(pos).query_pairs(tau, output_type="ndarray")
        if len(pairs):
            gaps = np.linalg.norm(pos[pairs[:, 0]] - pos[pairs[:, 1]], axis=1)
            pairs = pairs[gaps < tau]
        g = Graph.from_edges(n, map(tuple, pairs))
        if g.is_connected():
            return g, pos
    raise GraphError(f"no connected draw in {MAX_RGG_DRAWS} attempts (n={n}, seed={seed})")


def path_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def complete_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def star_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(0, j) for j in range(1, n)])


def write_edge_list(g: Graph, path) -> None:
    lines = [str(g.n)] + [f"{u} {v}" for u, v in g.edges()]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_edge_list(path) -> Graph:
    with open(path) as fh:
        tokens = [line.split() for line in fh if line.strip()]
    n = int(tokens[0][0])
    return Graph.from_edges(n, [(int(u), int(v)) for u, v in tokens[1:]])


def write_positions(pos: np.ndarray, path) -> None:
    with open(path, "w", newline="\n") as fh:
        for i, (x, y) in enumerate(pos):
            fh.write(f"{i} {float(x)!r} {float(y)!r}\n")


def read_positions(path) -> np.ndarray:
    rows = np.loadtxt(path, ndmin=2)
    pos = np.empty((len(rows), 2))
    pos[rows[:, 0].astype(int)] = rows[:, 1:3]
    return pos
