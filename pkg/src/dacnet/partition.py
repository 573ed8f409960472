"""Fusion centers, governing regions and the neighborhoods each center works on."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from dacnet.graph import UNREACHED, Graph, ball, ball_of_set


class PartitionError(ValueError):
    pass


def select_fusion_centers(g: Graph, R: int, seed: int) -> np.ndarray:
    """Greedy random centers: pick a remaining vertex, drop its 2R-ball, repeat."""
    rng = np.random.default_rng(seed)
    return _greedy_centers(g, R, lambda size: int(rng.integers(size)))


def _greedy_centers(g: Graph, R: int, pick) -> np.ndarray:
    if R < 1:
        raise PartitionError("R must be a positive integer")
    remaining = np.ones(g.n, dtype=bool)
    centers = []
    while remaining.any():
        pool = np.flatnonzero(remaining)
        c = int(pool[pick(len(pool))])
        centers.append(c)
        remaining[ball(g, c, 2 * R)] = False
    return np.array(sorted(centers), dtype=np.int64)


def voronoi_regions(g: Graph, centers) -> dict[int, np.ndarray]:
    """Nearest-center assignment; ties go to the smallest center index."""
    centers = np.array(sorted(int(c) for c in centers), dtype=np.int64)
    if centers.size == 0:
        raise PartitionError("need at least one center")
    best = np.full(g.n, np.iinfo(np.int64).max)
    owner = np.full(g.n, -1, dtype=np.int64)
    for c in centers:
        d = g.bfs([int(c)])
        d = np.where(d == UNREACHED, np.iinfo(np.int64).max, d)
        closer = d < best  # strict: earlier (smaller) centers keep ties
        best[closer] = d[closer]
        owner[closer] = c
    if np.any(owner < 0):
        raise PartitionError("some vertex is unreachable from every center")
    return {int(c): np.flatnonzero(owner == c) for c in centers}


@dataclass(frozen=True, eq=False)
class Partition:
    """Everything a fusion center stores about its own piece of the graph.

    ``nbhd[lam][l]`` is the l-neighborhood D_{lam,R,l} of the extended region,
    for l in {0, m, 2m, 4m}. ``w_local[lam]`` holds *row positions* of the
    constraint matrix, i.e. rows with a nonzero entry in ``extended[lam]``.
    """

    graph: Graph
    centers: tuple[int, ...]
    R: int
    m: int
    regions: dict
    extended: dict
    nbhd: dict
    w_local: dict
    out_neighbors: dict
    in_neighbors: dict
    row_vertices: np.ndarray | None = None

    def owner(self) -> np.ndarray:
        """Center governing each vertex."""
        own = np.empty(self.graph.n, dtype=np.int64)
        for lam in self.centers:
            own[self.regions[lam]] = lam
        return own

    def dump(self) -> str:
        lines = []
        for lam in self.centers:
            rows = self.w_local[lam]
            if self.row_vertices is not None:
                rows = self.row_vertices[rows]
            lines.append(
                f"center {lam} : "
                + " ".join(map(str, self.regions[lam]))
                + " | "
                + " ".join(map(str, self.extended[lam]))
                + " | "
                + " ".join(map(str, rows))
            )
        return "\n".join(lines) + "\n"


def build_partition(g: Graph, centers, regions: dict, R: int, m: int, A,
                    row_vertices=None) -> Partition:
    """Assemble extended neighborhoods, local constraint rows and the center topology.

    The extended region of a center is the R-ball around its governing region.
    """
    if R < 1 or m < 1:
        raise PartitionError("R and m must be positive integers")
    centers = tuple(sorted(int(c) for c in centers))
    if set(centers) != set(int(k) for k in regions):
        raise PartitionError("regions must be keyed by the centers")
    cover = np.zeros(g.n, dtype=np.int64)
    for lam in centers:
        reg = np.asarray(regions[lam], dtype=np.int64)
        if reg.size == 0:
            raise PartitionError(f"empty region for center {lam}")
        cover[reg] += 1
    if np.any(cover != 1):
        raise PartitionError("regions must cover V and be pairwise disjoint")

    A_csc = sp.csc_array(A)
    regions = {lam: np.sort(np.asarray(regions[lam], dtype=np.int64)) for lam in centers}
    extended, nbhd, w_local = {}, {}, {}
    for lam in centers:
        dist = g.bfs(regions[lam], cutoff=R + 4 * m)
        ext = np.flatnonzero((dist != UNREACHED) & (dist <= R))
        extended[lam] = ext
        # distance to the extended set is (distance to region) - R beyond it
        nbhd[lam] = {
            l: np.flatnonzero((dist != UNREACHED) & (dist <= R + l))
            for l in sorted({0, m, 2 * m, 4 * m})
        }
        cols = A_csc[:, ext]
        w_local[lam] = np.unique(cols.indices[cols.data != 0]) if cols.nnz else np.empty(0, np.int64)

    owner = np.empty(g.n, dtype=np.int64)
    for lam in centers:
        owner[regions[lam]] = lam
    in_nb = {lam: tuple(sorted(set(owner[nbhd[lam][4 * m]].tolist()))) for lam in centers}
    out_nb = {lam: [] for lam in centers}
    for lam in centers:
        for src in in_nb[lam]:
            out_nb[src].append(lam)
    out_nb = {lam: tuple(sorted(v)) for lam, v in out_nb.items()}
    rv = None if row_vertices is None else np.asarray(row_vertices, dtype=np.int64)
    return Partition(g, centers, int(R), int(m), regions, extended, nbhd, w_local,
                     out_nb, in_nb, rv)


def ball_distance_gap(g: Graph, region, extended) -> float:
    """rho(region, V minus extended); infinite when extended is all of V."""
    dist = g.bfs(region)
    outside = np.setdiff1d(np.arange(g.n), extended)
    if outside.size == 0:
        return math.inf
    return int(dist[outside].min())


def extended_by_ball(g: Graph, region, R: int) -> np.ndarray:
    return ball_of_set(g, region, R)
