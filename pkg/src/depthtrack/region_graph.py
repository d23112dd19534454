"""Region adjacency graph, hop-distance node table and ROI edge weights."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .noise_filter import RegionSet
from .roi_detect import Cardinal, CardinalDirection


def voronoi_cells(labels: np.ndarray, region_ids: list[int]) -> np.ndarray:
    """Label every pixel with its nearest region (Euclidean, ties to the lower id)."""
    ids = sorted(region_ids)
    if not ids:
        return np.zeros(labels.shape, dtype=np.int32)
    if len(ids) == 1:
        return np.full(labels.shape, ids[0], dtype=np.int32)
    dist = np.empty((len(ids),) + labels.shape, dtype=np.float64)
    for k, rid in enumerate(ids):
        dist[k] = ndimage.distance_transform_edt(labels != rid)
    return np.asarray(ids, dtype=np.int32)[np.argmin(dist, axis=0)]


def cell_adjacency(cells: np.ndarray) -> set[tuple[int, int]]:
    """Unordered label pairs that meet across an 8-neighbourhood."""
    edges = set()
    pairs = [
        (cells[:, :-1], cells[:, 1:]),
        (cells[:-1, :], cells[1:, :]),
        (cells[:-1, :-1], cells[1:, 1:]),
        (cells[:-1, 1:], cells[1:, :-1]),
    ]
    for a, b in pairs:
        diff = a != b
        if not diff.any():
            continue
        lo = np.minimum(a[diff], b[diff]).astype(np.int64)
        hi = np.maximum(a[diff], b[diff]).astype(np.int64)
        base = int(hi.max()) + 1
        for key in np.unique(lo * base + hi):
            edges.add((int(key // base), int(key % base)))
    return edges


@dataclass
class RegionGraph:
    """Undirected graph with one node per closed region."""

    nodes: list[int]
    adjacency: dict[int, set[int]]
    centroids: dict[int, tuple[float, float]] = field(default_factory=dict)
    cells: np.ndarray | None = None

    @property
    def edges(self) -> set[tuple[int, int]]:
        return {(a, b) for a, nb in self.adjacency.items() for b in nb if a < b}

    def neighbours(self, node: int) -> set[int]:
        return self.adjacency[node]

    def __contains__(self, node: int) -> bool:
        return node in self.adjacency

    @classmethod
    def from_edges(cls, nodes, edges, centroids=None) -> "RegionGraph":
        adj = {n: set() for n in nodes}
        for a, b in edges:
            if a == b:
                raise ValueError("self-loops are not allowed")
            adj[a].add(b)
            adj[b].add(a)
        return cls(sorted(adj), adj, dict(centroids or {}))

    def to_text(self, weights: "WeightedRegionGraph | None" = None) -> str:
        lines = [f"# nodes {' '.join(map(str, self.nodes))}"]
        for a, b in sorted(self.edges):
            w = weights.weight(a, b) if weights is not None else ""
            lines.append(f"{a} {b} {w}".rstrip())
        return "\n".join(lines) + "\n"


def build_graph(regions: RegionSet) -> RegionGraph:
    """Nodes are the closed regions; edges join regions whose Voronoi cells touch."""
    closed = regions.closed()
    ids = [r.id for r in closed]
    cells = voronoi_cells(regions.labels, ids)
    edges = cell_adjacency(cells) if len(ids) > 1 else set()
    g = RegionGraph.from_edges(ids, edges, {r.id: r.centroid for r in closed})
    g.cells = cells
    return g


@dataclass
class NodeTable:
    roi: int
    distance: dict[int, float]

    def __getitem__(self, node: int) -> float:
        return self.distance[node]


def node_table(graph: RegionGraph, roi: int) -> NodeTable:
    """Breadth-first hop distances from ``roi`` (``inf`` when unreachable)."""
    if roi not in graph:
        raise KeyError(f"ROI node {roi} is not in the graph")
    dist = {n: math.inf for n in graph.nodes}
    dist[roi] = 0
    queue = deque([roi])
    while queue:
        u = queue.popleft()
        for v in sorted(graph.adjacency[u]):
            if dist[v] == math.inf:
                dist[v] = dist[u] + 1
                queue.append(v)
    return NodeTable(roi, dist)


@dataclass
class WeightedRegionGraph:
    graph: RegionGraph
    roi: int
    weights: dict[tuple[int, int], int]

    def weight(self, a: int, b: int) -> int:
        return self.weights[(min(a, b), max(a, b))]

    def heavy_neighbours(self) -> set[int]:
        """Nodes joined to the ROI by a weight-1 edge."""
        return {b if a == self.roi else a for (a, b), w in self.weights.items() if w == 1}


def assign_weights(graph: RegionGraph, table: NodeTable) -> WeightedRegionGraph:
    """Weight 1 on edges from the ROI to nodes one hop away, 0 elsewhere."""
    weights = {}
    for a, b in graph.edges:
        if table.roi in (a, b):
            other = b if a == table.roi else a
            weights[(a, b)] = 1 if table.distance[other] == 1 else 0
        else:
            weights[(a, b)] = 0
    return WeightedRegionGraph(graph, table.roi, weights)


def lies_towards(graph: RegionGraph, roi: int, node: int, direction: CardinalDirection) -> bool:
    """True when ``node``'s centroid is on the side of ``roi`` named by any point of ``direction``."""
    r_row, r_col = graph.centroids[roi]
    n_row, n_col = graph.centroids[node]
    tests = {
        Cardinal.NORTH: n_row < r_row,
        Cardinal.SOUTH: n_row > r_row,
        Cardinal.EAST: n_col > r_col,
        Cardinal.WEST: n_col < r_col,
    }
    return any(tests[p] for p in direction)


def candidate_regions(
    wg: WeightedRegionGraph, roi: int, direction: CardinalDirection | None = None
) -> set[int]:
    """Weight-1 neighbours of ``roi``, optionally restricted to ``direction``.

    If the directional filter rejects every neighbour the unfiltered set is
    returned instead.
    """
    if roi != wg.roi:
        raise ValueError(f"weights were assigned for ROI {wg.roi}, not {roi}")
    full = wg.heavy_neighbours()
    if direction is None:
        return full
    pruned = {n for n in full if lies_towards(wg.graph, roi, n, direction)}
    return pruned or full
