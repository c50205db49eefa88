"""Fiber-only baseline analysis: conduit-graph stretch statistics, the
iterative link-pruning heuristic, and wavelength-lease costing.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Sequence

from .geo import GeoPoint, LatencyModel, geodesic_km
from .graphcore import WeightedGraph, bridges, shortest_path_lengths, shortest_paths_from
from .traffic import Pair, TrafficMatrix, pair_key

logger = logging.getLogger(__name__)

WAVELENGTH_GBPS = (1.0, 10.0, 40.0, 100.0)
MAX_WAVELENGTHS_PER_LINK = 2
UTILIZATION_FLOOR = 0.20
UTILIZATION_CEILING = 0.90

# Months are 365.25/12 days so that leases and tower rents amortize over
# the same year length.
SECONDS_PER_MONTH = 365.25 / 12.0 * 86400.0


@dataclass(frozen=True)
class FiberEndpoint:
    id: str
    location: GeoPoint
    population: float = 0.0


class FiberGraph:
    """Conduit endpoints and long-haul fiber links with physical lengths."""

    def __init__(self) -> None:
        self.endpoints: dict[str, FiberEndpoint] = {}
        self.links: dict[Pair, float] = {}

    def add_endpoint(self, ep: FiberEndpoint) -> None:
        if ep.id in self.endpoints:
            raise ValueError(f"duplicate endpoint {ep.id!r}")
        self.endpoints[ep.id] = ep

    def add_link(self, a: str, b: str, fiber_km: float) -> None:
        if a not in self.endpoints or b not in self.endpoints:
            raise ValueError(f"link ({a}, {b}) references unknown endpoint")
        if fiber_km <= 0:
            raise ValueError("fiber length must be > 0")
        key = pair_key(a, b)
        geo = geodesic_km(self.endpoints[a].location, self.endpoints[b].location)
        # Source data sometimes records geodesics; flag, do not reject.
        if fiber_km < geo * (1.0 - 1e-9):
            logger.warning("fiber link (%s, %s) shorter than geodesic: %.3f < %.3f km",
                           a, b, fiber_km, geo)
        self.links[key] = fiber_km

    def remove_link(self, a: str, b: str) -> None:
        del self.links[pair_key(a, b)]

    def graph(self) -> WeightedGraph:
        g = WeightedGraph()
        for eid in self.endpoints:
            g.add_node(eid)
        for (a, b), km in self.links.items():
            g.add_edge(a, b, km)
        return g

    def copy(self) -> "FiberGraph":
        g = FiberGraph()
        g.endpoints = dict(self.endpoints)
        g.links = dict(self.links)
        return g

    def total_fiber_km(self) -> float:
        return sum(self.links.values())


def load_fiber_csv(conduits_path: str, endpoints_path: str) -> FiberGraph:
    """Build a FiberGraph from endpoints (id,lat,lon,population) and conduits
    (endpoint_a,endpoint_b,fiber_km) CSV files."""
    g = FiberGraph()
    with open(endpoints_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "lat", "lon"} <= set(reader.fieldnames):
            raise ValueError(f"{endpoints_path}: expected header id,lat,lon[,population]")
        for row in reader:
            pop = float(row["population"]) if row.get("population") else 0.0
            g.add_endpoint(FiberEndpoint(row["id"],
                                         GeoPoint(float(row["lat"]), float(row["lon"])), pop))
    with open(conduits_path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"endpoint_a", "endpoint_b", "fiber_km"} <= set(reader.fieldnames):
            raise ValueError(f"{conduits_path}: expected header endpoint_a,endpoint_b,fiber_km")
        for row in reader:
            g.add_link(row["endpoint_a"], row["endpoint_b"], float(row["fiber_km"]))
    return g


@dataclass(frozen=True)
class StretchStats:
    """Weighted stretch summary over site pairs."""

    mean: float
    median: float
    p95: float
    weighting: str  # "uniform" | "gravity"
    pair_count: int = 0
    excluded_pairs: int = 0


def weighted_quantile(values: Sequence[float], weights: Sequence[float], q: float) -> float:
    """Lower weighted quantile: smallest value whose cumulative weight
    reaches q of the total. With equal weights this is the unweighted
    lower quantile, so uniform and degenerate-gravity weightings agree
    exactly."""
    if not values:
        raise ValueError("no values")
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must be in [0, 1]")
    order = sorted(range(len(values)), key=lambda i: values[i])
    total = sum(weights)
    if total <= 0:
        raise ValueError("weights must have positive total")
    target = q * total
    acc = 0.0
    for i in order:
        acc += weights[i]
        if acc >= target - 1e-15 * total:
            return values[i]
    return values[order[-1]]


def stretch_stats(per_pair: dict[Pair, float], weights: TrafficMatrix | None,
                  excluded_pairs: int = 0) -> StretchStats:
    """Summarize per-pair stretch, traffic-weighted when a matrix is given."""
    pairs = sorted(per_pair)
    values = [per_pair[p] for p in pairs]
    if weights is None:
        wts = [1.0] * len(values)
        label = "uniform"
    else:
        wts = [weights.weight(*p) for p in pairs]
        label = "gravity"
    total = sum(wts)
    if total <= 0:
        raise ValueError("no weighted pairs to summarize")
    mean = sum(v * w for v, w in zip(values, wts)) / total
    return StretchStats(
        mean=mean,
        median=weighted_quantile(values, wts, 0.5),
        p95=weighted_quantile(values, wts, 0.95),
        weighting=label,
        pair_count=len(values),
        excluded_pairs=excluded_pairs,
    )


def pair_stretches(g: FiberGraph, sites: Sequence[str],
                   model: LatencyModel = LatencyModel()) -> tuple[dict[Pair, float], int]:
    """Per-pair fiber stretch (path km x slowdown / geodesic km) and the
    number of disconnected pairs, which are logged and excluded."""
    for s in sites:
        if s not in g.endpoints:
            raise KeyError(f"unknown site {s!r}")
    wg = g.graph()
    ordered = sorted(set(sites))
    out: dict[Pair, float] = {}
    excluded = 0
    for i, s in enumerate(ordered):
        lengths = shortest_path_lengths(wg, s)
        for t in ordered[i + 1:]:
            if t not in lengths:
                logger.warning("site pair (%s, %s) disconnected in fiber graph", s, t)
                excluded += 1
                continue
            d = geodesic_km(g.endpoints[s].location, g.endpoints[t].location)
            if d == 0:
                raise ValueError(f"coincident sites ({s}, {t}): stretch undefined")
            out[(s, t)] = lengths[t] * model.fiber_slowdown / d
    return out, excluded


def fiber_stretch_stats(g: FiberGraph, sites: Sequence[str],
                        weights: TrafficMatrix | None = None,
                        model: LatencyModel = LatencyModel()) -> StretchStats:
    """Stretch statistics over the site set; gravity-weighted when `weights`
    is given, else uniform over pairs."""
    per_pair, excluded = pair_stretches(g, sites, model)
    return stretch_stats(per_pair, weights, excluded)


@dataclass(frozen=True)
class PruneStep:
    graph: FiberGraph
    stats: StretchStats
    link_count: int
    removed: Pair | None
    total_fiber_km: float


def _mean_stretch(g: FiberGraph, sites: Sequence[str], weights: TrafficMatrix | None,
                  model: LatencyModel) -> float:
    per_pair, _ = pair_stretches(g, sites, model)
    return stretch_stats(per_pair, weights).mean


def prune_links(g: FiberGraph, sites: Sequence[str],
                weights: TrafficMatrix | None = None,
                model: LatencyModel = LatencyModel()) -> list[PruneStep]:
    """Iteratively drop the non-bridge link whose removal least increases
    mean stretch, until only bridges remain.

    The returned sequence starts with the untouched input, so a tree comes
    back as a single step. Connectivity is never broken because bridge
    links are exempt.
    """
    work = g.copy()
    steps = [PruneStep(work.copy(), fiber_stretch_stats(work, sites, weights, model),
                       len(work.links), None, work.total_fiber_km())]
    while True:
        safe = bridges(work.graph())
        candidates = sorted(k for k in work.links if k not in safe)
        if not candidates:
            break
        best_key = None
        best_mean = math.inf
        for key in candidates:
            trial = work.copy()
            trial.remove_link(*key)
            mean = _mean_stretch(trial, sites, weights, model)
            if mean < best_mean:
                best_mean = mean
                best_key = key
        assert best_key is not None
        work.remove_link(*best_key)
        steps.append(PruneStep(work.copy(), fiber_stretch_stats(work, sites, weights, model),
                               len(work.links), best_key, work.total_fiber_km()))
    return steps


@dataclass(frozen=True)
class WavelengthAssignment:
    link: Pair
    demand_gbps: float
    capacity_gbps: float
    count: int
    utilization: float
    under_floor: bool = False
    unprovisionable: bool = False


@dataclass(frozen=True)
class WavelengthPlan:
    links: tuple[WavelengthAssignment, ...]
    aggregate_gbps: float

    def by_link(self) -> dict[Pair, WavelengthAssignment]:
        return {a.link: a for a in self.links}


def _pick_wavelength(demand: float) -> tuple[float, int, bool, bool]:
    """Smallest wavelength option covering `demand`; prefers utilization in
    the 20-90% lease band. Returns (capacity, count, under_floor,
    unprovisionable)."""
    options = [(cap, cnt) for cap in WAVELENGTH_GBPS
               for cnt in range(1, MAX_WAVELENGTHS_PER_LINK + 1)]
    covering = [(cap, cnt) for cap, cnt in options if cap * cnt >= demand]
    if not covering:
        return WAVELENGTH_GBPS[-1], MAX_WAVELENGTHS_PER_LINK, False, True
    in_band = [(cap, cnt) for cap, cnt in covering
               if UTILIZATION_FLOOR <= demand / (cap * cnt) <= UTILIZATION_CEILING]
    pool = in_band if in_band else covering
    cap, cnt = min(pool, key=lambda o: (o[0] * o[1], o[1]))
    util = demand / (cap * cnt)
    return cap, cnt, util < UTILIZATION_FLOOR, False


def route_fiber_demand(g: FiberGraph, weights: TrafficMatrix,
                       aggregate_gbps: float) -> dict[Pair, float]:
    """Per-link Gbps after placing each pair's demand on its shortest fiber path."""
    wg = g.graph()
    loads: dict[Pair, float] = {key: 0.0 for key in g.links}
    demands = weights.scaled(aggregate_gbps)
    for src in sorted({s for pair in demands for s in pair}):
        if src not in g.endpoints:
            raise KeyError(f"unknown site {src!r}")
        paths = shortest_paths_from(wg, src)
        for (a, b), gbps in demands.items():
            if a != src:
                continue
            if b not in paths:
                raise ValueError(f"site pair ({a}, {b}) disconnected in fiber graph")
            for u, v in paths[b].edges:
                loads[pair_key(u, v)] += gbps
    return loads


def provision_wavelengths(g: FiberGraph, sites: Sequence[str], weights: TrafficMatrix,
                          aggregate_gbps: float) -> WavelengthPlan:
    """Choose wavelength capacity/count per link for shortest-path routed
    demand. Every link of the topology is leased, including ones the
    routing leaves idle."""
    if aggregate_gbps <= 0:
        raise ValueError("aggregate must be > 0")
    site_set = set(sites)
    for a, b in weights.pairs():
        if a not in site_set or b not in site_set:
            raise ValueError(f"traffic pair ({a}, {b}) outside the site set")
    loads = route_fiber_demand(g, weights, aggregate_gbps)
    assignments = []
    for key in sorted(g.links):
        demand = loads.get(key, 0.0)
        cap, cnt, under, unprov = _pick_wavelength(demand)
        if unprov:
            logger.warning("link (%s, %s): demand %.1f Gbps exceeds 2x100 Gbps, "
                           "unprovisionable", key[0], key[1], demand)
        assignments.append(WavelengthAssignment(key, demand, cap, cnt,
                                                demand / (cap * cnt), under, unprov))
    return WavelengthPlan(tuple(assignments), aggregate_gbps)


@dataclass(frozen=True)
class LeaseCostModel:
    price_per_gbps_km_month: float = 0.25
    equipment_per_site: float = 10000.0
    colo_per_site_month: float = 2000.0
    term_months: int = 60

    def __post_init__(self) -> None:
        if min(self.price_per_gbps_km_month, self.equipment_per_site,
               self.colo_per_site_month, self.term_months) < 0:
            raise ValueError("cost model values must be >= 0")


@dataclass(frozen=True)
class LeaseCostReport:
    bandwidth_usd: float
    site_usd: float
    total_usd: float
    dollars_per_gb: float
    site_count: int


def lease_cost(plan: WavelengthPlan, g: FiberGraph,
               model: LeaseCostModel = LeaseCostModel(),
               aggregate_gbps: float | None = None,
               term_months: int | None = None) -> LeaseCostReport:
    """Wavelength-lease cost over the term plus per-site equipment/colo.

    Sites are the endpoints incident to leased links. Dollars per GB
    amortize the total over the aggregate input rate running continuously
    for the term.
    """
    months = model.term_months if term_months is None else term_months
    aggregate = plan.aggregate_gbps if aggregate_gbps is None else aggregate_gbps
    bandwidth = 0.0
    touched: set[str] = set()
    for a in plan.links:
        km = g.links[a.link]
        bandwidth += a.capacity_gbps * a.count * km * model.price_per_gbps_km_month * months
        touched.update(a.link)
    site = len(touched) * (model.equipment_per_site + model.colo_per_site_month * months)
    total = bandwidth + site
    if aggregate > 0 and months > 0:
        per_gb = total / (aggregate / 8.0 * months * SECONDS_PER_MONTH)
    else:
        per_gb = 0.0
    return LeaseCostReport(bandwidth, site, total, per_gb, len(touched))
