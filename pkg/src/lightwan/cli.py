"""Batch command-line front end.

Subcommands run the pipeline stages on file artifacts: `hopgraph` builds
tower-tower hop graphs, `design` optimizes topologies over budget
ladders, `fiber` runs the fiber-only baseline, `augment` provisions
bandwidth, `weather` replays precipitation failures, `simulate` drives
the packet simulator, and `export-geojson` renders designs for maps.

Exit codes: 0 success, 1 input or parse error, 2 infeasibility (e.g.
disconnected sites). All randomness flows from the configured seed; the
effective configuration is echoed into the output directory.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys

from . import capacity, designer, fiberbase, geo, los, simnet, traffic, weather
from .graphcore import shortest_path_lengths
from .traffic import TrafficMatrix, pair_key

DEFAULT_CONFIG: dict = {
    "towers_csv": None,
    "terrain_asc": None,
    "sites_csv": None,
    "dc_sites_csv": None,
    "fiber_endpoints_csv": None,
    "fiber_conduits_csv": None,
    "hops_csv": None,
    "instance_json": None,
    "design_json": None,
    "rain_csv": None,
    "rain_rasters": None,  # {timestamp: path}
    "seed": 0,
    "budget": 0.0,
    "budget_ladder": [],
    "aggregate_gbps": 100.0,
    "site_link_radius_km": 15.0,
    "traffic_model": "gravity",  # gravity | inter_dc | dc_edge | mix
    "mix_ratios": [4.0, 3.0, 3.0],
    "los": {
        "f_ghz": 11.0, "k_factor": 1.3, "max_range_km": 100.0,
        "usable_height_fraction": 1.0, "obstruction_margin_m": 0.0,
        "sample_step_m": 30.0,
    },
    "cull": {
        "enabled": False, "min_height_m": 100.0, "grid_cell_deg": 0.5,
        "max_per_cell": 50,
    },
    "mw_cost": {
        "link_cost_1gbps": 150000.0, "link_cost_500mbps": 75000.0,
        "new_tower": 100000.0, "rent_per_tower_year": 37500.0,
        "term_years": 5, "per_series_capacity_gbps": 1.0,
    },
    "lease_cost": {
        "price_per_gbps_km_month": 0.25, "equipment_per_site": 10000.0,
        "colo_per_site_month": 2000.0, "term_months": 60,
    },
    "attenuation": {
        "k_coeff": weather.DEFAULT_K_COEFF, "alpha": weather.DEFAULT_ALPHA,
        "fail_threshold_db": 30.0,
    },
    "weather": {"intervals_per_day": 0},  # 0 = use every timestamp
    "sim": {
        "packet_bytes": 500, "sim_seconds": 1.0,
        "queue_capacity_packets": 1000, "routing": "shortest_path",
        "warmup_fraction": 0.1, "per_flow_hashing": False,
        "fiber_capacity_gbps": 1000.0, "gammas": [], "loads": [],
    },
}


class _Parser(argparse.ArgumentParser):
    # Usage problems are input errors: exit 1, not argparse's default 2.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InputError(message)


class InputError(Exception):
    pass


def _deep_merge(base: dict, overlay: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in overlay.items():
        if key not in out:
            raise InputError(f"unknown config key {key!r}")
        if isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def _apply_set(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise InputError(f"--set expects key=value, got {assignment!r}")
    dotted, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    keys = dotted.split(".")
    for key in keys[:-1]:
        if key not in node or not isinstance(node[key], dict):
            raise InputError(f"unknown config path {dotted!r}")
        node = node[key]
    if keys[-1] not in node:
        raise InputError(f"unknown config key {dotted!r}")
    node[keys[-1]] = value


def load_config(path: str | None, sets: list[str], seed: int | None) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path) as fh:
            cfg = _deep_merge(cfg, json.load(fh))
    for assignment in sets:
        _apply_set(cfg, assignment)
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def _require(cfg: dict, *keys: str) -> None:
    for key in keys:
        if not cfg.get(key):
            raise InputError(f"config field {key!r} is required for this command")


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _echo_config(cfg: dict, outdir: str) -> None:
    with open(os.path.join(outdir, "config_used.json"), "w") as fh:
        json.dump(cfg, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load_terrain(cfg) -> los.TerrainGrid:
    _require(cfg, "terrain_asc")
    return los.load_terrain_asc(cfg["terrain_asc"])


def _load_towers(cfg, terrain=None) -> list[los.Tower]:
    _require(cfg, "towers_csv")
    towers = los.load_towers_csv(cfg["towers_csv"], terrain=terrain)
    if not towers:
        raise InputError(f"{cfg['towers_csv']}: no towers")
    if cfg["cull"]["enabled"]:
        towers = los.cull_towers(towers, cfg["cull"]["min_height_m"],
                                 cfg["cull"]["grid_cell_deg"],
                                 cfg["cull"]["max_per_cell"], cfg["seed"])
    return towers


def _los_params(cfg) -> los.LosParams:
    return los.LosParams(**cfg["los"])


def _traffic_matrix(cfg, cities, dcs) -> TrafficMatrix:
    model = cfg["traffic_model"]
    if model == "gravity":
        return traffic.gravity_matrix(cities)
    if model == "inter_dc":
        return traffic.inter_dc_matrix(dcs)
    if model == "dc_edge":
        return traffic.dc_edge_matrix(cities, dcs)
    if model == "mix":
        return traffic.mix(
            [traffic.gravity_matrix(cities), traffic.dc_edge_matrix(cities, dcs),
             traffic.inter_dc_matrix(dcs)],
            traffic.TrafficMix(tuple(cfg["mix_ratios"])))
    raise InputError(f"unknown traffic model {model!r}")


def _load_sites(cfg):
    _require(cfg, "sites_csv")
    cities = geo.load_sites_csv(cfg["sites_csv"])
    dcs = geo.load_sites_csv(cfg["dc_sites_csv"]) if cfg.get("dc_sites_csv") else []
    return cities, dcs


def _fiber_pair_lengths(fiber: fiberbase.FiberGraph, sites) -> dict:
    """Per-pair fiber km: shortest conduit path between the endpoints
    nearest to each site, plus the site-to-endpoint stub distances (which
    keeps path lengths at or above the site geodesic)."""
    nearest = {}
    stub = {}
    for site in sites:
        best = min(fiber.endpoints.values(),
                   key=lambda ep: (geo.geodesic_km(site.location, ep.location), ep.id))
        nearest[site.id] = best.id
        stub[site.id] = geo.geodesic_km(site.location, best.location)
    g = fiber.graph()
    out = {}
    ordered = sorted(sites, key=lambda s: s.id)
    for i, a in enumerate(ordered):
        lengths = shortest_path_lengths(g, nearest[a.id])
        for b in ordered[i + 1:]:
            ep = nearest[b.id]
            if ep in lengths:
                km = stub[a.id] + lengths[ep] + stub[b.id]
                if km > 0:
                    out[pair_key(a.id, b.id)] = km
    return out


# ---------------------------------------------------------------------------
# Commands


def cmd_hopgraph(cfg, args) -> int:
    outdir = _outdir(args)
    terrain = _load_terrain(cfg)
    towers = _load_towers(cfg, terrain)
    hop_graph = los.build_hop_graph(towers, terrain, _los_params(cfg))
    los.save_hops_csv(hop_graph, os.path.join(outdir, "hops.csv"))
    summary = {"towers": len(towers), "hops": len(hop_graph.hops)}
    with open(os.path.join(outdir, "hopgraph_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    _echo_config(cfg, outdir)
    print(f"hopgraph: {summary['towers']} towers, {summary['hops']} feasible hops")
    return 0


def _assemble_input(cfg, budget: float) -> designer.DesignInput:
    cities, dcs = _load_sites(cfg)
    sites = cities + [d for d in dcs if d.id not in {c.id for c in cities}]
    matrix = _traffic_matrix(cfg, cities, dcs)
    hop_graph = None
    if cfg.get("hops_csv"):
        terrain = _load_terrain(cfg) if cfg.get("terrain_asc") else None
        towers = los.load_towers_csv(cfg["towers_csv"], terrain=terrain)
        hop_graph = los.load_hops_csv(cfg["hops_csv"], towers)
    elif cfg.get("towers_csv"):
        terrain = _load_terrain(cfg)
        towers = _load_towers(cfg, terrain)
        hop_graph = los.build_hop_graph(towers, terrain, _los_params(cfg))
    _require(cfg, "fiber_endpoints_csv", "fiber_conduits_csv")
    fiber = fiberbase.load_fiber_csv(cfg["fiber_conduits_csv"], cfg["fiber_endpoints_csv"])
    fiber_lengths = _fiber_pair_lengths(fiber, sites)
    return designer.build_design_input(
        sites, matrix, hop_graph, fiber_lengths, budget,
        radius_km=cfg["site_link_radius_km"])


def cmd_design(cfg, args) -> int:
    outdir = _outdir(args)
    ladder = list(cfg["budget_ladder"]) or [cfg["budget"]]
    stats_rows = []
    for budget in ladder:
        if cfg.get("instance_json"):
            inp = designer.load_design_input(cfg["instance_json"])
            inp.budget = float(budget)
        else:
            inp = _assemble_input(cfg, float(budget))
        design = designer.solve_heuristic(inp)
        tag = f"{budget:g}"
        designer.save_design_input(inp, os.path.join(outdir, f"instance_B{tag}.json"))
        designer.save_design(design, os.path.join(outdir, f"design_B{tag}.json"))
        gj = designer.design_to_geojson(inp, design)
        with open(os.path.join(outdir, f"links_B{tag}.geojson"), "w") as fh:
            json.dump(gj, fh, indent=1, sort_keys=True)
            fh.write("\n")
        stats_rows.append([budget, design.towers_used, design.stats.mean,
                           design.stats.median, design.stats.p95])
        print(f"design B={tag}: mean stretch {design.stats.mean:.4f}, "
              f"{len(design.built_links)} MW links, {design.towers_used:g} towers")
    with open(os.path.join(outdir, "design_stats.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["budget", "towers_used", "mean", "median", "p95"])
        writer.writerows(stats_rows)
    _echo_config(cfg, outdir)
    return 0


def cmd_fiber(cfg, args) -> int:
    outdir = _outdir(args)
    _require(cfg, "fiber_endpoints_csv", "fiber_conduits_csv")
    fiber = fiberbase.load_fiber_csv(cfg["fiber_conduits_csv"], cfg["fiber_endpoints_csv"])
    sites = sorted(fiber.endpoints)
    populations = {eid: ep.population for eid, ep in fiber.endpoints.items()}
    weights = None
    if all(p > 0 for p in populations.values()):
        weights = TrafficMatrix({pair_key(a, b): populations[a] * populations[b]
                                 for i, a in enumerate(sites) for b in sites[i + 1:]})
    demand = weights if weights is not None else TrafficMatrix(
        {pair_key(a, b): 1.0 for i, a in enumerate(sites) for b in sites[i + 1:]})
    model = fiberbase.LeaseCostModel(**cfg["lease_cost"])
    steps = fiberbase.prune_links(fiber, sites, weights)
    with open(os.path.join(outdir, "fiber_pruning.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["links", "mean", "median", "p95", "total_fiber_km",
                         "cost_total_usd"])
        for step in steps:
            plan = fiberbase.provision_wavelengths(step.graph, sites, demand,
                                                   cfg["aggregate_gbps"])
            cost = fiberbase.lease_cost(plan, step.graph, model)
            writer.writerow([step.link_count, repr(step.stats.mean),
                             repr(step.stats.median), repr(step.stats.p95),
                             repr(step.total_fiber_km), repr(cost.total_usd)])
    base = steps[0].stats
    plan = fiberbase.provision_wavelengths(fiber, sites, demand, cfg["aggregate_gbps"])
    cost = fiberbase.lease_cost(plan, fiber, model)
    with open(os.path.join(outdir, "fiber_baseline.json"), "w") as fh:
        json.dump({
            "stats": {"mean": base.mean, "median": base.median, "p95": base.p95,
                      "weighting": base.weighting, "pair_count": base.pair_count,
                      "excluded_pairs": base.excluded_pairs},
            "lease_cost": {"bandwidth_usd": cost.bandwidth_usd,
                           "site_usd": cost.site_usd, "total_usd": cost.total_usd,
                           "dollars_per_gb": cost.dollars_per_gb,
                           "site_count": cost.site_count},
        }, fh, indent=1, sort_keys=True)
        fh.write("\n")
    _echo_config(cfg, outdir)
    print(f"fiber: median stretch {base.median:.3f}, "
          f"{len(steps)} pruning steps, ${cost.total_usd:,.0f} lease")
    return 0


def _load_instance_and_design(cfg):
    _require(cfg, "instance_json", "design_json")
    inp = designer.load_design_input(cfg["instance_json"])
    doc = designer.load_design(cfg["design_json"])
    built = designer.built_links_from_design_doc(doc)
    return inp, designer.evaluate_design(inp, built)


def cmd_augment(cfg, args) -> int:
    outdir = _outdir(args)
    inp, design = _load_instance_and_design(cfg)
    terrain = _load_terrain(cfg) if cfg.get("terrain_asc") else None
    towers = los.load_towers_csv(cfg["towers_csv"], terrain=terrain)
    _require(cfg, "hops_csv")
    hop_graph = los.load_hops_csv(cfg["hops_csv"], towers)
    model = capacity.MwCostModel(**cfg["mw_cost"])
    loads = capacity.route_demand(design, inp.traffic, cfg["aggregate_gbps"])
    plan = capacity.augment(design, loads, hop_graph, inp.sites,
                            radius_km=cfg["site_link_radius_km"],
                            per_series_capacity_gbps=model.per_series_capacity_gbps)
    report = capacity.mw_cost(design, plan, model, cfg["aggregate_gbps"])
    capacity.plan_to_json(plan, report, os.path.join(outdir, "augment_plan.json"))
    capacity.plan_categories_csv(plan, os.path.join(outdir, "augment_categories.csv"))
    _echo_config(cfg, outdir)
    print(f"augment: {plan.total_new_towers} new towers, "
          f"${report.total_usd:,.0f} total, ${report.dollars_per_gb:.3f}/GB")
    return 0


def cmd_weather(cfg, args) -> int:
    outdir = _outdir(args)
    inp, design = _load_instance_and_design(cfg)
    if cfg.get("rain_csv"):
        field = weather.load_rain_csv(cfg["rain_csv"])
    elif cfg.get("rain_rasters"):
        rasters = cfg["rain_rasters"]
        if isinstance(rasters, str):
            # Directory of .asc grids named by timestamp.
            rasters = {os.path.splitext(name)[0]: os.path.join(rasters, name)
                       for name in sorted(os.listdir(rasters))
                       if name.endswith(".asc")}
            if not rasters:
                raise InputError(f"no .asc rasters in {cfg['rain_rasters']!r}")
        field = weather.load_rain_rasters(rasters)
    else:
        raise InputError("weather needs rain_csv or rain_rasters")
    coords = {s.id: s.location for s in inp.sites}
    if cfg.get("towers_csv"):
        terrain = _load_terrain(cfg) if cfg.get("terrain_asc") else None
        for t in los.load_towers_csv(cfg["towers_csv"], terrain=terrain):
            coords[t.id] = t.location
    model = weather.AttenuationModel(**cfg["attenuation"])
    stamps = field.timestamps()
    per_day = cfg["weather"]["intervals_per_day"]
    if per_day:
        stamps = weather.select_intervals(stamps, per_day, cfg["seed"])
    report = weather.analyze(inp, design, field, coords, model, stamps)
    weather.write_intervals_csv(report, os.path.join(outdir, "weather_intervals.csv"))
    weather.write_percentiles_csv(report, os.path.join(outdir, "weather_percentiles.csv"))
    _echo_config(cfg, outdir)
    worst = max(i.stats.mean for i in report.intervals)
    print(f"weather: {len(report.intervals)} intervals, "
          f"worst interval mean stretch {worst:.4f}")
    return 0


def cmd_simulate(cfg, args) -> int:
    outdir = _outdir(args)
    inp, design = _load_instance_and_design(cfg)
    sim = cfg["sim"]
    aggregate = cfg["aggregate_gbps"]
    loads = capacity.route_demand(design, inp.traffic, aggregate)
    per_series = cfg["mw_cost"]["per_series_capacity_gbps"]
    caps = {pair: capacity.series_needed(load, per_series) ** 2 * per_series
            for pair, load in loads.mw.items()}
    topo = simnet.topology_from_design(inp, design, link_capacities=caps,
                                       fiber_capacity_gbps=sim["fiber_capacity_gbps"],
                                       per_series_capacity_gbps=per_series)
    simnet.save_topology(topo, os.path.join(outdir, "topology.json"))
    base_cfg = simnet.SimConfig(
        packet_bytes=sim["packet_bytes"], sim_seconds=sim["sim_seconds"],
        queue_capacity_packets=sim["queue_capacity_packets"],
        aggregate_gbps=aggregate, routing=sim["routing"], seed=cfg["seed"],
        warmup_fraction=sim["warmup_fraction"],
        per_flow_hashing=sim["per_flow_hashing"])
    if sim["gammas"] and sim["loads"]:
        results = simnet.perturbation_experiment(
            topo, inp.sites, base_cfg, sim["gammas"], sim["loads"],
            designed_aggregate_gbps=aggregate)
        simnet.write_results_csv(results, os.path.join(outdir, "perturbation.csv"))
        print(f"simulate: {len(results)} sweep points")
    else:
        table = simnet.build_routing(topo, inp.traffic, sim["routing"])
        stats = simnet.run(topo, inp.traffic, table, base_cfg)
        with open(os.path.join(outdir, "flows.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["src", "dst", "rate_gbps", "sent", "delivered",
                             "dropped", "in_flight", "mean_delay_ms",
                             "max_delay_ms", "loss"])
            for (a, b), r in sorted(stats.flows.items()):
                writer.writerow([a, b, repr(r.rate_gbps), r.sent, r.delivered,
                                 r.dropped, r.in_flight, repr(r.mean_delay_ms),
                                 repr(r.max_delay_ms), repr(r.loss)])
        simnet.write_utilization_csv(stats, os.path.join(outdir, "link_utilization.csv"))
        print(f"simulate: mean delay {stats.mean_delay_ms:.4f} ms, "
              f"loss {stats.loss_rate:.4f}")
    _echo_config(cfg, outdir)
    return 0


def cmd_export_geojson(cfg, args) -> int:
    outdir = _outdir(args)
    inp, design = _load_instance_and_design(cfg)
    towers = None
    if cfg.get("towers_csv"):
        terrain = _load_terrain(cfg) if cfg.get("terrain_asc") else None
        towers = {t.id: t for t in los.load_towers_csv(cfg["towers_csv"], terrain=terrain)}
    gj = designer.design_to_geojson(inp, design, towers)
    with open(os.path.join(outdir, "links.geojson"), "w") as fh:
        json.dump(gj, fh, indent=1, sort_keys=True)
        fh.write("\n")
    _echo_config(cfg, outdir)
    print(f"export-geojson: {len(gj['features'])} features")
    return 0


COMMANDS = {
    "hopgraph": cmd_hopgraph,
    "design": cmd_design,
    "fiber": cmd_fiber,
    "augment": cmd_augment,
    "weather": cmd_weather,
    "simulate": cmd_simulate,
    "export-geojson": cmd_export_geojson,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="lightwan",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in COMMANDS.items():
        p = sub.add_parser(name, help=func.__doc__)
        p.add_argument("--config", help="JSON config file; defaults apply otherwise")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config field by dotted path, "
                            "e.g. --set los.max_range_km=70")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config, args.set, args.seed)
        return COMMANDS[args.command](cfg, args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except (designer.InfeasibleDesignError, designer.ExactGuardExceeded) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
