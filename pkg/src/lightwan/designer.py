"""Budgeted hybrid topology design.

Selects which site-to-site microwave links to build, given per-pair MW
and fiber distances and a tower budget, minimizing traffic-weighted mean
stretch. Fiber is always available at zero budget cost; MW links pay
their tower count. The solver pipeline is: provably-safe elimination of
fiber-dominated candidates, exact branch-and-bound when the candidate
pool is small, and otherwise greedy candidate generation under an
inflated budget followed by local improvement.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .fiberbase import StretchStats, stretch_stats
from .geo import GeoPoint, Site, geodesic_km
from .graphcore import WeightedGraph, shortest_path_lengths, shortest_paths_from
from .los import HopGraph
from .traffic import Pair, TrafficMatrix, pair_key

EXACT_CANDIDATE_GUARD = 25
_REL_TOL = 1e-9


class ExactGuardExceeded(Exception):
    """solve_exact refused an instance too large for exact search."""


class InfeasibleDesignError(Exception):
    """Some site pair cannot be routed over the available links."""


@dataclass
class DesignInput:
    """One optimization instance.

    Matrices are keyed by canonical unordered site pairs: `geodesic` (d),
    `mw_km` (m, absent where MW is infeasible), `mw_cost` (towers, c),
    and `fiber_km_eq` (o, fiber path km already multiplied by the 1.5
    slowdown so all lengths are latency-equivalent km). `tower_paths`
    optionally records the tower chain realizing each MW link for
    augmentation and weather analysis downstream.
    """

    sites: list[Site]
    traffic: TrafficMatrix
    geodesic: dict[Pair, float]
    mw_km: dict[Pair, float]
    mw_cost: dict[Pair, float]
    fiber_km_eq: dict[Pair, float]
    budget: float
    fiber_slowdown: float = 1.5
    tower_paths: dict[Pair, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.budget < 0:
            raise ValueError("budget must be >= 0")
        ids = [s.id for s in self.sites]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate site ids")
        known = set(ids)
        for matrix in (self.geodesic, self.mw_km, self.mw_cost, self.fiber_km_eq):
            for a, b in matrix:
                if a not in known or b not in known:
                    raise ValueError(f"pair ({a}, {b}) references unknown site")
        for pair, m in self.mw_km.items():
            if pair not in self.geodesic:
                raise ValueError(f"mw pair {pair} lacks a geodesic entry")
            if m < self.geodesic[pair] * (1.0 - _REL_TOL):
                raise ValueError(f"mw length for {pair} below geodesic")
            if pair not in self.mw_cost:
                raise ValueError(f"mw pair {pair} lacks a cost entry")
        for pair, c in self.mw_cost.items():
            if c < 1:
                raise ValueError(f"mw cost for {pair} must be >= 1 tower")
        for pair, o in self.fiber_km_eq.items():
            if o < self.fiber_slowdown * self.geodesic[pair] * (1.0 - _REL_TOL):
                raise ValueError(f"fiber length for {pair} below {self.fiber_slowdown}x geodesic")

    @property
    def site_ids(self) -> list[str]:
        return sorted(s.id for s in self.sites)


@dataclass(frozen=True)
class PairRoute:
    """The routed path for one site pair in the hybrid graph."""

    nodes: tuple[str, ...]
    media: tuple[str, ...]  # per edge: "mw" | "fiber"
    length_km: float        # latency-equivalent km
    stretch: float

    @property
    def edges(self) -> list[tuple[str, str]]:
        return list(zip(self.nodes, self.nodes[1:]))


@dataclass(frozen=True)
class NetworkDesign:
    """A chosen MW link set with its routing and stretch summary."""

    built_links: tuple[Pair, ...]
    routes: dict[Pair, PairRoute]
    stats: StretchStats
    towers_used: float
    budget: float


class HybridEvaluator:
    """Caches objective evaluations of built-link subsets for one instance."""

    def __init__(self, inp: DesignInput) -> None:
        self.inp = inp
        self._cache: dict[frozenset, float] = {}
        self._base = WeightedGraph()
        for sid in inp.site_ids:
            self._base.add_node(sid)
        for (a, b), o in inp.fiber_km_eq.items():
            self._base.add_edge(a, b, o)

    def graph_for(self, built: Iterable[Pair]) -> WeightedGraph:
        g = self._base.copy()
        for pair in built:
            m = self.inp.mw_km[pair]
            if not g.has_edge(*pair) or m < g.edge_weight(*pair):
                g.add_edge(pair[0], pair[1], m)
        return g

    def objective(self, built: frozenset) -> float:
        """Sum over pairs of (h/d) x routed latency-equivalent km; +inf when
        some demand pair is unroutable."""
        cached = self._cache.get(built)
        if cached is not None:
            return cached
        g = self.graph_for(built)
        total = 0.0
        by_src: dict[str, list[tuple[str, float, float]]] = {}
        for (a, b), h in self.inp.traffic.items():
            by_src.setdefault(a, []).append((b, h, self.inp.geodesic[(a, b)]))
        for src, targets in by_src.items():
            lengths = shortest_path_lengths(g, src)
            for dst, h, d in targets:
                if dst not in lengths:
                    total = math.inf
                    break
                total += h / d * lengths[dst]
            if math.isinf(total):
                break
        self._cache[built] = total
        return total


def objective(inp: DesignInput, design: NetworkDesign) -> float:
    """Eq-style objective of an evaluated design: sum of (h/d) x path length.

    Equals the traffic-weighted mean stretch because the matrix is
    normalized. Raises when a demand pair is missing from the routing.
    """
    total = 0.0
    for (a, b), h in inp.traffic.items():
        route = design.routes.get((a, b))
        if route is None:
            raise InfeasibleDesignError(f"pair ({a}, {b}) is not routed")
        total += h / inp.geodesic[(a, b)] * route.length_km
    return total


def fiber_shortest_lengths(inp: DesignInput) -> dict[Pair, float]:
    """Shortest fiber-only latency-equivalent km per site pair."""
    g = WeightedGraph()
    for sid in inp.site_ids:
        g.add_node(sid)
    for (a, b), o in inp.fiber_km_eq.items():
        g.add_edge(a, b, o)
    out: dict[Pair, float] = {}
    ids = inp.site_ids
    for i, s in enumerate(ids):
        lengths = shortest_path_lengths(g, s)
        for t in ids[i + 1:]:
            if t in lengths:
                out[(s, t)] = lengths[t]
    return out


def eliminate_dominated(inp: DesignInput) -> list[Pair]:
    """Candidate MW links that can carry some flow in an optimal design.

    A link whose MW length is at least the best fiber path between its
    endpoints can be replaced edge-for-path by fiber in any routing
    without increasing any path length, so dropping it preserves the
    optimum while saving budget.
    """
    fiber = fiber_shortest_lengths(inp)
    keep = []
    for pair in sorted(inp.mw_km):
        best_fiber = fiber.get(pair, math.inf)
        if inp.mw_km[pair] < best_fiber:
            keep.append(pair)
    return keep


def greedy_candidates(inp: DesignInput, inflation: float = 2.0,
                      evaluator: HybridEvaluator | None = None) -> list[Pair]:
    """Greedy candidate links under an inflated budget.

    Repeatedly adds the single link whose addition lowers the objective
    the most (ties to the lexicographically smallest pair) while the cost
    so far is below inflation x budget; the terminating addition may
    overshoot the inflated budget, which is fine because the final solver
    enforces the real one. Stops early when no addition strictly
    improves. The add order does not depend on the budget, so candidate
    lists for nested budgets are nested prefixes.
    """
    if inflation < 1.0:
        raise ValueError("inflation must be >= 1")
    ev = evaluator or HybridEvaluator(inp)
    pool = eliminate_dominated(inp)
    chosen: list[Pair] = []
    chosen_set: frozenset = frozenset()
    cost = 0.0
    cap = inflation * inp.budget
    current = ev.objective(chosen_set)
    while cost < cap:
        best_pair = None
        best_val = current
        for pair in pool:
            if pair in chosen_set:
                continue
            val = ev.objective(chosen_set | {pair})
            if val < best_val:
                best_val = val
                best_pair = pair
        if best_pair is None:
            break
        chosen.append(best_pair)
        chosen_set = chosen_set | {best_pair}
        cost += inp.mw_cost[best_pair]
        current = best_val
    return chosen


def solve_exact(inp: DesignInput, candidates: Sequence[Pair],
                evaluator: HybridEvaluator | None = None) -> NetworkDesign:
    """Optimal candidate subset under the budget by branch-and-bound.

    The bound at a node is the objective with every undecided link built
    for free (admissible: links only shorten paths). Refuses more than
    EXACT_CANDIDATE_GUARD candidates; callers fall back to
    solve_heuristic's greedy path.
    """
    cands = sorted(set(candidates))
    if len(cands) > EXACT_CANDIDATE_GUARD:
        raise ExactGuardExceeded(
            f"{len(cands)} candidates exceed the exact-search guard "
            f"({EXACT_CANDIDATE_GUARD})")
    for pair in cands:
        if pair not in inp.mw_km:
            raise ValueError(f"candidate {pair} is not an available MW link")
    ev = evaluator or HybridEvaluator(inp)
    costs = [inp.mw_cost[p] for p in cands]

    best_set = frozenset()
    best_val = ev.objective(best_set)

    def consider(subset: frozenset) -> None:
        nonlocal best_set, best_val
        val = ev.objective(subset)
        if val < best_val - _REL_TOL * max(1.0, abs(best_val)):
            best_val = val
            best_set = subset

    def dfs(i: int, chosen: frozenset, cost: float) -> None:
        rest = cands[i:]
        rest_cost = sum(costs[i:])
        relaxed = chosen | frozenset(rest)
        bound = ev.objective(relaxed)
        # Links only shorten paths, so the budget-relaxed completion bounds
        # every completion of this node from below.
        if bound >= best_val - _REL_TOL * max(1.0, abs(best_val)):
            return
        if cost + rest_cost <= inp.budget:
            # Everything remaining fits: the relaxed completion is feasible
            # and optimal for the whole subtree.
            consider(relaxed)
            return
        if i == len(cands):
            consider(chosen)
            return
        if cost + costs[i] <= inp.budget:
            dfs(i + 1, chosen | {cands[i]}, cost + costs[i])
        dfs(i + 1, chosen, cost)

    dfs(0, frozenset(), 0.0)
    return evaluate_design(inp, sorted(best_set))


def _local_improve(inp: DesignInput, ev: HybridEvaluator, built: set[Pair],
                   pool: Sequence[Pair], max_moves: int = 1000) -> set[Pair]:
    """Local improvement to a first local optimum, bounded at `max_moves`.

    Moves are single additions within remaining budget (links are free
    capacity-wise, so an improving add is always safe) and single swaps
    (remove one built, add one unbuilt) that respect the budget.
    """
    built = set(built)
    cost = sum(inp.mw_cost[p] for p in built)
    current = ev.objective(frozenset(built))
    for _ in range(max_moves):
        best_move: tuple[Pair | None, Pair] | None = None
        best_val = current
        for added in pool:
            if added in built:
                continue
            if cost + inp.mw_cost[added] <= inp.budget:
                val = ev.objective(frozenset(built) | {added})
                if val < best_val:
                    best_val = val
                    best_move = (None, added)
        for removed in sorted(built):
            for added in pool:
                if added in built:
                    continue
                if cost - inp.mw_cost[removed] + inp.mw_cost[added] > inp.budget:
                    continue
                val = ev.objective(frozenset(built) - {removed} | {added})
                if val < best_val:
                    best_val = val
                    best_move = (removed, added)
        if best_move is None:
            break
        removed, added = best_move
        if removed is not None:
            built.remove(removed)
            cost -= inp.mw_cost[removed]
        built.add(added)
        cost += inp.mw_cost[added]
        current = best_val
    return built


def solve_heuristic(inp: DesignInput) -> NetworkDesign:
    """Design pipeline behind every CLI run.

    Dominated candidates are eliminated first (optimality-preserving).
    When the surviving pool fits the exact-search guard the answer is the
    true optimum over it. Larger instances go through greedy candidate
    generation at 2x budget, exact search over those candidates when they
    fit the guard (else greedy selection trimmed to budget), and a local
    improvement pass over the full pool, which recovers cheap
    complementary links the greedy cutoff can miss.
    """
    ev = HybridEvaluator(inp)
    pool = eliminate_dominated(inp)
    if len(pool) <= EXACT_CANDIDATE_GUARD:
        return solve_exact(inp, pool, evaluator=ev)
    cands = greedy_candidates(inp, 2.0, evaluator=ev)
    if len(cands) <= EXACT_CANDIDATE_GUARD:
        built = set(solve_exact(inp, cands, evaluator=ev).built_links)
    else:
        # Walk the greedy order, keeping every link that still fits.
        built = set()
        cost = 0.0
        for pair in cands:
            if cost + inp.mw_cost[pair] <= inp.budget:
                built.add(pair)
                cost += inp.mw_cost[pair]
    built = _local_improve(inp, ev, built, pool)
    return evaluate_design(inp, sorted(built))


def evaluate_design(inp: DesignInput, built_links: Sequence[Pair]) -> NetworkDesign:
    """Route every site pair over built MW plus all fiber links and
    summarize traffic-weighted stretch.

    Raises InfeasibleDesignError when any site pair is unreachable and
    ValueError when the built set exceeds the budget.
    """
    built = sorted(set(pair_key(*p) for p in built_links))
    for pair in built:
        if pair not in inp.mw_km:
            raise ValueError(f"built link {pair} is not an available MW link")
    towers = sum(inp.mw_cost[p] for p in built)
    if towers > inp.budget + 1e-9:
        raise ValueError(f"built links cost {towers} towers, budget is {inp.budget}")

    ev = HybridEvaluator(inp)
    g = ev.graph_for(built)
    built_set = set(built)

    def edge_medium(a: str, b: str) -> str:
        key = pair_key(a, b)
        if key in built_set:
            o = inp.fiber_km_eq.get(key)
            if o is None or inp.mw_km[key] <= o:
                return "mw"
        return "fiber"

    ids = inp.site_ids
    routes: dict[Pair, PairRoute] = {}
    per_pair_stretch: dict[Pair, float] = {}
    for i, src in enumerate(ids):
        paths = shortest_paths_from(g, src)
        for dst in ids[i + 1:]:
            p = paths.get(dst)
            if p is None:
                raise InfeasibleDesignError(f"pair ({src}, {dst}) cannot be routed")
            d = inp.geodesic[(src, dst)]
            media = tuple(edge_medium(u, v) for u, v in p.edges)
            s = p.total_weight / d
            routes[(src, dst)] = PairRoute(p.nodes, media, p.total_weight, s)
            per_pair_stretch[(src, dst)] = s
    stats = stretch_stats(per_pair_stretch, inp.traffic)
    return NetworkDesign(tuple(built), routes, stats, towers, inp.budget)


# ---------------------------------------------------------------------------
# Deriving MW link inputs from a hop graph


@dataclass(frozen=True)
class SiteLink:
    length_km: float
    tower_count: int
    path: tuple[str, ...]  # site, towers..., site


def pair_graph(hop_graph: HopGraph, a: Site, b: Site, radius_km: float) -> WeightedGraph:
    """Tower graph with the two sites attached to all towers within radius_km."""
    g = hop_graph.graph()
    for site in (a, b):
        g.add_node(site.id)
        for tid, tower in hop_graph.towers.items():
            d = geodesic_km(site.location, tower.location)
            if d <= radius_km and d > 0:
                g.add_edge(site.id, tid, d)
    return g


def site_links(sites: Sequence[Site], hop_graph: HopGraph,
               radius_km: float = 15.0) -> dict[Pair, SiteLink]:
    """Shortest MW tower path between every site pair.

    Sites attach to all towers within `radius_km` (cities are assumed to
    host tower capacity); the link cost is the number of distinct towers
    on the path. Pairs with no tower route are absent.
    """
    out: dict[Pair, SiteLink] = {}
    ordered = sorted(sites, key=lambda s: s.id)
    for i, a in enumerate(ordered):
        for b in ordered[i + 1:]:
            g = pair_graph(hop_graph, a, b, radius_km)
            paths = shortest_paths_from(g, a.id)
            p = paths.get(b.id)
            if p is None or len(p.nodes) < 3:
                continue
            towers = len(p.nodes) - 2
            out[pair_key(a.id, b.id)] = SiteLink(p.total_weight, towers, p.nodes)
    return out


def build_design_input(sites: Sequence[Site], traffic: TrafficMatrix,
                       hop_graph: HopGraph | None, fiber_lengths: dict[Pair, float],
                       budget: float, radius_km: float = 15.0,
                       fiber_slowdown: float = 1.5) -> DesignInput:
    """Assemble a DesignInput from pipeline artifacts.

    `fiber_lengths` holds physical shortest-path fiber km per site pair
    (from the conduit graph); they are converted to latency-equivalent km
    here.
    """
    geodesic = {}
    ordered = sorted(sites, key=lambda s: s.id)
    for i, a in enumerate(ordered):
        for b in ordered[i + 1:]:
            geodesic[pair_key(a.id, b.id)] = geodesic_km(a.location, b.location)
    links = site_links(sites, hop_graph, radius_km) if hop_graph is not None else {}
    return DesignInput(
        sites=list(sites),
        traffic=traffic,
        geodesic=geodesic,
        mw_km={k: v.length_km for k, v in links.items()},
        mw_cost={k: float(v.tower_count) for k, v in links.items()},
        fiber_km_eq={k: v * fiber_slowdown for k, v in fiber_lengths.items()},
        budget=budget,
        fiber_slowdown=fiber_slowdown,
        tower_paths={k: v.path for k, v in links.items()},
    )


# ---------------------------------------------------------------------------
# Serialization


def _dense(matrix: dict[Pair, float], ids: list[str]) -> list[list[float | None]]:
    n = len(ids)
    idx = {s: i for i, s in enumerate(ids)}
    out: list[list[float | None]] = [[None] * n for _ in range(n)]
    for i in range(n):
        out[i][i] = 0.0
    for (a, b), v in matrix.items():
        out[idx[a]][idx[b]] = v
        out[idx[b]][idx[a]] = v
    return out


def _sparse(dense: list[list[float | None]], ids: list[str]) -> dict[Pair, float]:
    out: dict[Pair, float] = {}
    for i, a in enumerate(ids):
        for j in range(i + 1, len(ids)):
            v = dense[i][j]
            if v is not None:
                out[pair_key(a, ids[j])] = float(v)
    return out


def save_design_input(inp: DesignInput, path: str) -> None:
    ids = inp.site_ids
    doc = {
        "sites": [{"id": s.id, "lat": s.location.lat, "lon": s.location.lon,
                   "population": s.population}
                  for s in sorted(inp.sites, key=lambda s: s.id)],
        "budget": inp.budget,
        "fiber_slowdown": inp.fiber_slowdown,
        "traffic": _dense(inp.traffic.as_dict(), ids),
        "geodesic_km": _dense(inp.geodesic, ids),
        "mw_km": _dense(inp.mw_km, ids),
        "mw_cost_towers": _dense(inp.mw_cost, ids),
        "fiber_km_eq": _dense(inp.fiber_km_eq, ids),
        "tower_paths": {f"{a}|{b}": list(p) for (a, b), p in sorted(inp.tower_paths.items())},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_design_input(path: str) -> DesignInput:
    with open(path) as fh:
        doc = json.load(fh)
    sites = [Site(s["id"], GeoPoint(s["lat"], s["lon"]), s.get("population", 0.0))
             for s in doc["sites"]]
    ids = sorted(s.id for s in sites)
    tower_paths = {}
    for key, nodes in doc.get("tower_paths", {}).items():
        a, b = key.split("|")
        tower_paths[pair_key(a, b)] = tuple(nodes)
    return DesignInput(
        sites=sites,
        traffic=TrafficMatrix(_sparse(doc["traffic"], ids)),
        geodesic=_sparse(doc["geodesic_km"], ids),
        mw_km=_sparse(doc["mw_km"], ids),
        mw_cost=_sparse(doc["mw_cost_towers"], ids),
        fiber_km_eq=_sparse(doc["fiber_km_eq"], ids),
        budget=doc["budget"],
        fiber_slowdown=doc.get("fiber_slowdown", 1.5),
        tower_paths=tower_paths,
    )


def save_design(design: NetworkDesign, path: str) -> None:
    doc = {
        "built_links": [list(p) for p in design.built_links],
        "towers_used": design.towers_used,
        "budget": design.budget,
        "stats": {
            "mean": design.stats.mean, "median": design.stats.median,
            "p95": design.stats.p95, "weighting": design.stats.weighting,
            "pair_count": design.stats.pair_count,
        },
        "per_pair": [
            {"src": a, "dst": b, "nodes": list(r.nodes), "media": list(r.media),
             "length_km": r.length_km, "stretch": r.stretch}
            for (a, b), r in sorted(design.routes.items())
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_design(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def built_links_from_design_doc(doc: dict) -> list[Pair]:
    return [pair_key(a, b) for a, b in doc["built_links"]]


def design_to_geojson(inp: DesignInput, design: NetworkDesign,
                      towers: dict | None = None) -> dict:
    """FeatureCollection of built MW links and the fiber links any route
    uses. MW geometry follows the tower path when tower coordinates are
    available, else the direct site-site line."""
    locs = {s.id: s.location for s in inp.sites}

    def coords(node: str) -> list[float]:
        if node in locs:
            p = locs[node]
        elif towers is not None and node in towers:
            p = towers[node].location
        else:
            raise KeyError(f"no coordinates for node {node!r}")
        return [p.lon, p.lat]

    features = []
    for pair in design.built_links:
        path = inp.tower_paths.get(pair)
        if path and (towers is not None):
            line = [coords(n) for n in path]
        else:
            line = [coords(pair[0]), coords(pair[1])]
        features.append({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": line},
            "properties": {"medium": "mw", "link": list(pair),
                           "length_km": inp.mw_km[pair],
                           "cost_towers": inp.mw_cost[pair]},
        })
    fiber_used: set[Pair] = set()
    for route in design.routes.values():
        for (u, v), medium in zip(route.edges, route.media):
            if medium == "fiber":
                fiber_used.add(pair_key(u, v))
    for pair in sorted(fiber_used):
        features.append({
            "type": "Feature",
            "geometry": {"type": "LineString",
                         "coordinates": [coords(pair[0]), coords(pair[1])]},
            "properties": {"medium": "fiber", "link": list(pair),
                           "length_km": inp.fiber_km_eq[pair] / inp.fiber_slowdown},
        })
    return {"type": "FeatureCollection", "features": features}
