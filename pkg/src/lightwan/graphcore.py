"""Weighted-graph algorithms shared across the toolkit.

Shortest paths break ties toward the lexicographically smallest node-id
sequence so that designs are reproducible; graphs are treated as
immutable during queries.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Iterable, Iterator


@dataclass(frozen=True)
class Path:
    """An ordered node walk with its summed edge weight."""

    nodes: tuple[str, ...]
    total_weight: float

    @property
    def edges(self) -> list[tuple[str, str]]:
        return list(zip(self.nodes, self.nodes[1:]))

    @property
    def interior(self) -> tuple[str, ...]:
        return self.nodes[1:-1]


class WeightedGraph:
    """Undirected graph with positive edge weights and opaque string ids."""

    def __init__(self) -> None:
        self._adj: dict[str, dict[str, float]] = {}

    def add_node(self, node: str) -> None:
        self._adj.setdefault(node, {})

    def add_edge(self, a: str, b: str, weight: float) -> None:
        if a == b:
            raise ValueError(f"self-loop on {a!r}")
        if weight <= 0:
            raise ValueError(f"edge weight must be > 0, got {weight}")
        self.add_node(a)
        self.add_node(b)
        self._adj[a][b] = weight
        self._adj[b][a] = weight

    def remove_node(self, node: str) -> None:
        for nbr in self._adj.pop(node, {}):
            del self._adj[nbr][node]

    def remove_edge(self, a: str, b: str) -> None:
        del self._adj[a][b]
        del self._adj[b][a]

    def __contains__(self, node: str) -> bool:
        return node in self._adj

    def nodes(self) -> list[str]:
        return list(self._adj)

    def neighbors(self, node: str) -> dict[str, float]:
        return self._adj[node]

    def has_edge(self, a: str, b: str) -> bool:
        return a in self._adj and b in self._adj[a]

    def edge_weight(self, a: str, b: str) -> float:
        return self._adj[a][b]

    def edges(self) -> Iterator[tuple[str, str, float]]:
        for a, nbrs in self._adj.items():
            for b, w in nbrs.items():
                if a < b:
                    yield a, b, w

    def copy(self) -> "WeightedGraph":
        g = WeightedGraph()
        g._adj = {n: dict(nbrs) for n, nbrs in self._adj.items()}
        return g


def _check_nodes(g: WeightedGraph, *nodes: str) -> None:
    for n in nodes:
        if n not in g:
            raise KeyError(f"unknown node {n!r}")


def shortest_path(g: WeightedGraph, src: str, dst: str) -> Path | None:
    """Minimal-weight path from src to dst, or None when disconnected.

    Among equal-weight alternatives the lexicographically smallest node
    sequence wins. src == dst yields a zero-weight single-node path.
    """
    _check_nodes(g, src, dst)
    if src == dst:
        return Path((src,), 0.0)
    heap: list[tuple[float, tuple[str, ...]]] = [(0.0, (src,))]
    settled: set[str] = set()
    while heap:
        dist, nodes = heapq.heappop(heap)
        node = nodes[-1]
        if node in settled:
            continue
        settled.add(node)
        if node == dst:
            return Path(nodes, dist)
        for nbr, w in g.neighbors(node).items():
            if nbr not in settled:
                heapq.heappush(heap, (dist + w, nodes + (nbr,)))
    return None


def shortest_paths_from(g: WeightedGraph, src: str) -> dict[str, Path]:
    """Tie-broken shortest paths from src to every reachable node."""
    _check_nodes(g, src)
    heap: list[tuple[float, tuple[str, ...]]] = [(0.0, (src,))]
    out: dict[str, Path] = {}
    while heap:
        dist, nodes = heapq.heappop(heap)
        node = nodes[-1]
        if node in out:
            continue
        out[node] = Path(nodes, dist)
        for nbr, w in g.neighbors(node).items():
            if nbr not in out:
                heapq.heappush(heap, (dist + w, nodes + (nbr,)))
    return out


def shortest_path_lengths(g: WeightedGraph, src: str) -> dict[str, float]:
    """Dijkstra distances from src (no path reconstruction; used in inner loops)."""
    _check_nodes(g, src)
    heap: list[tuple[float, str]] = [(0.0, src)]
    dist: dict[str, float] = {}
    while heap:
        d, node = heapq.heappop(heap)
        if node in dist:
            continue
        dist[node] = d
        for nbr, w in g.neighbors(node).items():
            if nbr not in dist:
                heapq.heappush(heap, (d + w, nbr))
    return dist


def all_pairs_site_paths(g: WeightedGraph, sites: Iterable[str]) -> dict[str, dict[str, float]]:
    """Symmetric matrix of shortest-path weights between the given sites.

    Entries for disconnected pairs are absent; the diagonal is zero.
    """
    site_list = sorted(set(sites))
    _check_nodes(g, *site_list)
    out: dict[str, dict[str, float]] = {s: {s: 0.0} for s in site_list}
    for i, s in enumerate(site_list):
        lengths = shortest_path_lengths(g, s)
        for t in site_list[i + 1:]:
            if t in lengths:
                out[s][t] = lengths[t]
                out[t][s] = lengths[t]
    return out


def tower_disjoint_paths(g: WeightedGraph, src: str, dst: str, n: int) -> list[Path]:
    """Up to n successively interior-disjoint shortest paths from src to dst.

    Each path is found after deleting the interior nodes of all previous
    ones, so weights are non-decreasing; the list is short when the graph
    is exhausted. A direct src-dst edge, having no interior, is consumed
    after its first use so the iteration makes progress.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    _check_nodes(g, src, dst)
    work = g.copy()
    paths: list[Path] = []
    for _ in range(n):
        p = shortest_path(work, src, dst)
        if p is None:
            break
        paths.append(p)
        if p.interior:
            for node in p.interior:
                work.remove_node(node)
        else:
            work.remove_edge(src, dst)
    return paths


def bridges(g: WeightedGraph) -> set[tuple[str, str]]:
    """Edges whose removal disconnects their component (canonical (min,max) keys)."""
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    out: set[tuple[str, str]] = set()
    counter = 0
    for root in sorted(g.nodes()):
        if root in index:
            continue
        # Iterative DFS; stack entries are (node, parent, neighbor iterator).
        stack = [(root, None, iter(sorted(g.neighbors(root))))]
        index[root] = low[root] = counter
        counter += 1
        while stack:
            node, parent, it = stack[-1]
            advanced = False
            for nbr in it:
                if nbr not in index:
                    index[nbr] = low[nbr] = counter
                    counter += 1
                    stack.append((nbr, node, iter(sorted(g.neighbors(nbr)))))
                    advanced = True
                    break
                elif nbr != parent:
                    low[node] = min(low[node], index[nbr])
            if not advanced:
                stack.pop()
                if stack:
                    pnode = stack[-1][0]
                    low[pnode] = min(low[pnode], low[node])
                    if low[node] > index[pnode]:
                        out.add((min(pnode, node), max(pnode, node)))
    return out


def connected(g: WeightedGraph, nodes: Iterable[str]) -> bool:
    """True when every listed node lies in one connected component."""
    targets = set(nodes)
    _check_nodes(g, *targets)
    if len(targets) <= 1:
        return True
    start = next(iter(targets))
    seen = {start}
    frontier = [start]
    while frontier:
        node = frontier.pop()
        for nbr in g.neighbors(node):
            if nbr not in seen:
                seen.add(nbr)
                frontier.append(nbr)
    return targets <= seen
