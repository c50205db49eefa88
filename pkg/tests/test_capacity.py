import math

import numpy as np
import pytest

from lightwan import capacity, designer, los
from lightwan.capacity import (
    AugmentationPlan, LinkAugmentation, MwCostModel, augment, mw_cost,
    parallel_spacing_km, route_demand, series_needed,
)
from lightwan.geo import GeoPoint, Site, geodesic_km
from lightwan.los import LosParams, TerrainGrid, Tower
from lightwan.traffic import TrafficMatrix, pair_key

KM_PER_DEG = math.pi * 6371.0 / 180.0


def test_series_needed_paper_thresholds():
    assert series_needed(0.5) == 1
    assert series_needed(3.0) == 2
    assert series_needed(8.5) == 3


def test_series_needed_boundaries():
    assert series_needed(0.0) == 1
    assert series_needed(1.0) == 1
    assert series_needed(1.0001) == 2
    assert series_needed(4.0) == 2
    assert series_needed(9.0) == 3
    assert series_needed(16.5) == 5
    assert series_needed(2.0, per_series_capacity_gbps=0.5) == 2  # 2^2 x 0.5 = 2


def test_series_invariant_random():
    rng = np.random.default_rng(2)
    for demand in rng.uniform(0.0, 200.0, size=100):
        k = series_needed(float(demand))
        assert k * k >= demand
        if k > 1:
            assert (k - 1) ** 2 < demand


def test_parallel_spacing_examples():
    assert parallel_spacing_km(100.0) == pytest.approx(10.5104235, abs=1e-6)
    assert parallel_spacing_km(50.0) == pytest.approx(5.2552118, abs=1e-6)
    assert parallel_spacing_km(0.001) == pytest.approx(0.000105, abs=1e-6)
    with pytest.raises(ValueError):
        parallel_spacing_km(0.0)


def two_site_design(mw_len=100.0, with_fiber=True):
    sites = [Site("aa", GeoPoint(0, 0), 1.0), Site("bb", GeoPoint(0, 1), 1.0)]
    d = {("aa", "bb"): geodesic_km(sites[0].location, sites[1].location)}
    m = {("aa", "bb"): max(mw_len, d[("aa", "bb")])}
    o = {("aa", "bb"): 1.6 * d[("aa", "bb")]} if with_fiber else {}
    inp = designer.DesignInput(sites, TrafficMatrix({("aa", "bb"): 1.0}), d, m,
                               {("aa", "bb"): 2.0}, o, budget=5.0)
    return inp, designer.evaluate_design(inp, [("aa", "bb")])


def test_route_demand_zero_aggregate():
    _, design = two_site_design()
    loads = route_demand(design, TrafficMatrix({("aa", "bb"): 1.0}), 0.0)
    assert all(v == 0.0 for v in loads.mw.values())
    assert not loads.fiber


def test_route_demand_single_pair_full_path():
    _, design = two_site_design()
    loads = route_demand(design, TrafficMatrix({("aa", "bb"): 1.0}), 100.0)
    assert loads.mw == {("aa", "bb"): 100.0}


def test_route_demand_matches_bruteforce_accumulation():
    import os, sys
    sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
    from test_designer import random_instance

    inp = random_instance(14, n_sites=6, mw_fraction=0.6)
    design = designer.solve_heuristic(inp)
    aggregate = 80.0
    loads = route_demand(design, inp.traffic, aggregate)
    expected_mw: dict = {}
    expected_fiber: dict = {}
    for (a, b), h in inp.traffic.items():
        route = design.routes[(a, b)]
        for (u, v), medium in zip(route.edges, route.media):
            key = pair_key(u, v)
            tgt = expected_mw if medium == "mw" else expected_fiber
            tgt[key] = tgt.get(key, 0.0) + h * aggregate
    assert loads.mw == pytest.approx(expected_mw)
    assert loads.fiber == pytest.approx(expected_fiber)
    # Demand conservation: summed link load equals sum of demand x hops.
    total = sum(loads.mw.values()) + sum(loads.fiber.values())
    expected_total = sum(h * aggregate * len(design.routes[p].media)
                         for p, h in inp.traffic.items())
    assert total == pytest.approx(expected_total)


def corridor(n_rows: int):
    """n_rows parallel tower chains between two sites; rows too far apart
    to interconnect, so each row is one interior-disjoint series."""
    terr = TerrainGrid(np.zeros((40, 40)), -1.5, -1.5, 0.25)
    spacing = 30.0 / KM_PER_DEG
    row_gap = 0.40  # ~44 km, beyond the 40 km max range
    towers = []
    for r in range(n_rows):
        lat = 0.0 + r * row_gap
        for i in range(1, 10):
            towers.append(Tower(f"r{r}t{i:02d}", GeoPoint(lat, -1.2 + i * spacing), 90.0, 0.0))
    hg = los.build_hop_graph(towers, terr, LosParams(max_range_km=40.0, sample_step_m=500.0))
    mid_lat = (n_rows - 1) * row_gap / 2.0
    a = Site("aa", GeoPoint(mid_lat, -1.2), 5.0)
    b = Site("bb", GeoPoint(mid_lat, -1.2 + 10 * spacing), 5.0)
    radius = (22.0 + 44.0 * (n_rows - 1) / 2.0) + 10.0
    return a, b, hg, radius


def corridor_design(n_rows, demand_gbps):
    a, b, hg, radius = corridor(n_rows)
    traffic = TrafficMatrix({(a.id, b.id): 1.0})
    d = geodesic_km(a.location, b.location)
    fiber = {pair_key(a.id, b.id): 1.5 * d}
    inp = designer.build_design_input([a, b], traffic, hg, fiber, budget=100.0,
                                      radius_km=radius)
    design = designer.solve_heuristic(inp)
    assert design.built_links == (pair_key(a.id, b.id),)
    loads = route_demand(design, traffic, demand_gbps)
    plan = augment(design, loads, hg, [a, b], radius_km=radius)
    return plan


def test_augment_low_demand_single_series():
    plan = corridor_design(2, demand_gbps=0.8)
    entry = plan.links[0]
    assert entry.series_count == 1
    assert entry.shortfall == 0
    assert plan.total_new_towers == 0


def test_augment_two_chains_available():
    plan = corridor_design(2, demand_gbps=3.0)
    entry = plan.links[0]
    assert entry.series_count == 2
    assert entry.series_found == 1
    assert entry.shortfall == 0
    assert plan.total_new_towers == 0
    assert plan.hops_by_category == {0: entry.primary_hops}


def test_augment_shortfall_charged_as_new_towers():
    plan = corridor_design(1, demand_gbps=3.0)
    entry = plan.links[0]
    assert entry.series_count == 2
    assert entry.series_found == 0
    assert entry.shortfall == 1
    assert entry.new_towers == 2 * entry.primary_hops
    assert plan.hops_by_category == {1: entry.primary_hops}


def test_augment_k_squared_invariant():
    for rows, demand in ((2, 3.9), (1, 2.5), (2, 0.2)):
        plan = corridor_design(rows, demand)
        e = plan.links[0]
        k = e.series_count
        assert k * k * plan.per_series_capacity_gbps >= e.demand_gbps
        if k > 1:
            assert (k - 1) ** 2 * plan.per_series_capacity_gbps < e.demand_gbps


def test_mw_cost_empty_design():
    plan = AugmentationPlan((), 1.0)
    report = mw_cost(None, plan, MwCostModel(), aggregate_gbps=0.0)
    assert report.total_usd == 0.0
    assert report.dollars_per_gb == 0.0


def test_mw_cost_single_hop_arithmetic():
    # One tower-tower hop, one series, two existing towers, 1 Gbps for the
    # 5-year default term.
    entry = LinkAugmentation(link=("aa", "bb"), demand_gbps=1.0, series_count=1,
                             series_found=0, shortfall=0, primary_hops=1,
                             extra_series_hops=(), new_towers=0,
                             towers_used=("t1", "t2"))
    plan = AugmentationPlan((entry,), 1.0)
    report = mw_cost(None, plan, MwCostModel(), aggregate_gbps=1.0)
    assert report.capex_usd == pytest.approx(150000.0)
    assert report.rent_usd == pytest.approx(37500.0 * 2 * 5)
    assert report.total_usd == pytest.approx(525000.0)
    seconds = 5 * capacity.SECONDS_PER_YEAR
    assert report.dollars_per_gb == pytest.approx(525000.0 / (1.0 / 8.0 * seconds))
    assert report.dollars_per_gb == pytest.approx(0.0266, abs=2e-4)


def test_mw_cost_toy_plan_spreadsheet():
    entries = (
        LinkAugmentation(("a", "b"), 2.5, 2, 1, 0, 4, (5,), 0,
                         tuple(f"ab{i}" for i in range(11))),
        LinkAugmentation(("a", "c"), 0.5, 1, 0, 0, 3, (), 0,
                         tuple(f"ac{i}" for i in range(4))),
        LinkAugmentation(("b", "c"), 5.0, 3, 1, 1, 2, (2,), 4,
                         tuple(f"bc{i}" for i in range(3))),
    )
    plan = AugmentationPlan(entries, 1.0)
    model = MwCostModel()
    report = mw_cost(None, plan, model, aggregate_gbps=10.0)
    radios = (4 + 5 + 0 * 4) + 3 + (2 + 2 + 1 * 2)
    new_towers = 4
    towers = 11 + 4 + 3 + new_towers
    capex = 150000.0 * radios + 100000.0 * new_towers
    rent = 37500.0 * towers * 5
    assert report.radio_hops == radios
    assert report.capex_usd == pytest.approx(capex)
    assert report.rent_usd == pytest.approx(rent)
    gb = 10.0 / 8.0 * 5 * capacity.SECONDS_PER_YEAR
    assert report.dollars_per_gb == pytest.approx((capex + rent) / gb)


def test_cost_monotone_in_aggregate():
    prev = 0.0
    for aggregate in (1.0, 2.0, 5.0, 9.0):
        plan = corridor_design(2, demand_gbps=aggregate)
        report = mw_cost(None, plan, MwCostModel(), aggregate)
        assert report.total_usd >= prev
        prev = report.total_usd


def test_plan_serialization(tmp_path):
    plan = corridor_design(2, demand_gbps=3.0)
    report = mw_cost(None, plan, MwCostModel(), 3.0)
    jpath = tmp_path / "plan.json"
    cpath = tmp_path / "cats.csv"
    capacity.plan_to_json(plan, report, str(jpath))
    capacity.plan_categories_csv(plan, str(cpath))
    import json
    doc = json.loads(jpath.read_text())
    assert doc["total_new_towers"] == 0
    assert "cost" in doc
    lines = cpath.read_text().strip().splitlines()
    assert len(lines) == 1 + len(plan.links)
