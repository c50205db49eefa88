import csv
import json
import os

import pytest

from lightwan import designer, los
from lightwan.cli import main

DATA = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")
DEMO = os.path.join(DATA, "demo")
GOLDEN = os.path.join(DATA, "golden")
REGEN = os.environ.get("LIGHTWAN_REGEN_GOLDEN") == "1"


def demo_config(**overrides):
    cfg = {
        "towers_csv": os.path.join(DEMO, "towers.csv"),
        "terrain_asc": os.path.join(DEMO, "terrain.asc"),
        "sites_csv": os.path.join(DEMO, "sites.csv"),
        "dc_sites_csv": os.path.join(DEMO, "dc_sites.csv"),
        "fiber_endpoints_csv": os.path.join(DEMO, "fiber_endpoints.csv"),
        "fiber_conduits_csv": os.path.join(DEMO, "fiber_conduits.csv"),
        "rain_csv": os.path.join(DEMO, "rain.csv"),
        "site_link_radius_km": 50.0,
        "budget": 25.0,
        "aggregate_gbps": 12.0,
        "seed": 7,
    }
    cfg.update(overrides)
    return cfg


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One full demo pipeline run shared by the checks below."""
    root = tmp_path_factory.mktemp("pipeline")
    cfgp = write_config(root, demo_config())
    out = {"root": root, "config": cfgp}

    hop_dir = str(root / "hop")
    assert main(["hopgraph", "--config", cfgp, "--out", hop_dir]) == 0
    out["hops_csv"] = os.path.join(hop_dir, "hops.csv")
    out["hop_summary"] = os.path.join(hop_dir, "hopgraph_summary.json")

    design_dir = str(root / "design")
    assert main(["design", "--config", cfgp, "--out", design_dir,
                 "--set", f"hops_csv={out['hops_csv']}",
                 "--set", "budget_ladder=[0, 10, 25]"]) == 0
    out["design_dir"] = design_dir
    out["instance"] = os.path.join(design_dir, "instance_B25.json")
    out["design"] = os.path.join(design_dir, "design_B25.json")
    out["stats_csv"] = os.path.join(design_dir, "design_stats.csv")

    fiber_dir = str(root / "fiber")
    assert main(["fiber", "--config", cfgp, "--out", fiber_dir]) == 0
    out["pruning_csv"] = os.path.join(fiber_dir, "fiber_pruning.csv")
    out["fiber_baseline"] = os.path.join(fiber_dir, "fiber_baseline.json")

    aug_dir = str(root / "aug")
    assert main(["augment", "--config", cfgp, "--out", aug_dir,
                 "--set", f"instance_json={out['instance']}",
                 "--set", f"design_json={out['design']}",
                 "--set", f"hops_csv={out['hops_csv']}"]) == 0
    out["augment_plan"] = os.path.join(aug_dir, "augment_plan.json")

    weather_dir = str(root / "weather")
    assert main(["weather", "--config", cfgp, "--out", weather_dir,
                 "--set", f"instance_json={out['instance']}",
                 "--set", f"design_json={out['design']}"]) == 0
    out["weather_intervals"] = os.path.join(weather_dir, "weather_intervals.csv")
    out["weather_pct"] = os.path.join(weather_dir, "weather_percentiles.csv")

    sim_dir = str(root / "sim")
    assert main(["simulate", "--config", cfgp, "--out", sim_dir,
                 "--set", f"instance_json={out['instance']}",
                 "--set", f"design_json={out['design']}",
                 "--set", "sim.sim_seconds=0.02"]) == 0
    out["flows_csv"] = os.path.join(sim_dir, "flows.csv")
    out["util_csv"] = os.path.join(sim_dir, "link_utilization.csv")

    gj_dir = str(root / "gj")
    assert main(["export-geojson", "--config", cfgp, "--out", gj_dir,
                 "--set", f"instance_json={out['instance']}",
                 "--set", f"design_json={out['design']}"]) == 0
    out["geojson"] = os.path.join(gj_dir, "links.geojson")
    return out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def assert_matches_golden(path, name):
    """Numeric-tolerant golden comparison; regenerate with
    LIGHTWAN_REGEN_GOLDEN=1."""
    golden_path = os.path.join(GOLDEN, name)
    if REGEN:
        os.makedirs(GOLDEN, exist_ok=True)
        with open(path) as src, open(golden_path, "w") as dst:
            dst.write(src.read())
        return
    got = read_csv(path)
    want = read_csv(golden_path)
    assert len(got) == len(want), f"{name}: row count {len(got)} != {len(want)}"
    for grow, wrow in zip(got, want):
        assert grow.keys() == wrow.keys()
        for key in wrow:
            try:
                expected = float(wrow[key])
            except ValueError:
                assert grow[key] == wrow[key]
                continue
            assert float(grow[key]) == pytest.approx(expected, rel=1e-9), \
                f"{name}: field {key}: {grow[key]} != {wrow[key]}"


def test_hopgraph_count_matches_library(pipeline):
    with open(pipeline["hop_summary"]) as fh:
        summary = json.load(fh)
    terrain = los.load_terrain_asc(os.path.join(DEMO, "terrain.asc"))
    towers = los.load_towers_csv(os.path.join(DEMO, "towers.csv"), terrain=terrain)
    hg = los.build_hop_graph(towers, terrain, los.LosParams())
    assert summary["hops"] == len(hg.hops)
    assert summary["towers"] == len(towers)


def test_hopgraph_rerun_byte_identical(pipeline, tmp_path):
    out2 = str(tmp_path / "hop2")
    assert main(["hopgraph", "--config", pipeline["config"], "--out", out2]) == 0
    first = open(pipeline["hops_csv"]).read()
    second = open(os.path.join(out2, "hops.csv")).read()
    assert first == second


def test_design_budget_zero_is_fiber_only(pipeline):
    rows = read_csv(pipeline["stats_csv"])
    assert float(rows[0]["budget"]) == 0.0
    assert float(rows[0]["towers_used"]) == 0.0
    inp = designer.load_design_input(
        os.path.join(pipeline["design_dir"], "instance_B0.json"))
    fiber_only = designer.evaluate_design(inp, [])
    assert float(rows[0]["mean"]) == pytest.approx(fiber_only.stats.mean, rel=1e-12)


def test_design_ladder_monotone(pipeline):
    rows = read_csv(pipeline["stats_csv"])
    means = [float(r["mean"]) for r in rows]
    assert means == sorted(means, reverse=True) or all(
        later <= earlier + 1e-9 for earlier, later in zip(means, means[1:]))


def test_design_rerun_byte_identical(pipeline, tmp_path):
    out2 = str(tmp_path / "design2")
    assert main(["design", "--config", pipeline["config"], "--out", out2,
                 "--set", f"hops_csv={pipeline['hops_csv']}",
                 "--set", "budget_ladder=[25]"]) == 0
    first = open(pipeline["design"]).read()
    second = open(os.path.join(out2, "design_B25.json")).read()
    assert first == second


def test_design_golden(pipeline):
    assert_matches_golden(pipeline["stats_csv"], "design_stats.csv")


def test_fiber_pruning_golden_and_monotone(pipeline):
    rows = read_csv(pipeline["pruning_csv"])
    means = [float(r["mean"]) for r in rows]
    for earlier, later in zip(means, means[1:]):
        assert later >= earlier - 1e-12
    counts = [int(r["links"]) for r in rows]
    assert counts == sorted(counts, reverse=True)
    assert_matches_golden(pipeline["pruning_csv"], "fiber_pruning.csv")


def test_fiber_tree_conduit_single_step(tmp_path):
    eps = tmp_path / "eps.csv"
    eps.write_text("id,lat,lon,population\na,0,0,1\nb,0,1,1\nc,0,2,1\n")
    conduits = tmp_path / "conduits.csv"
    conduits.write_text("endpoint_a,endpoint_b,fiber_km\na,b,140\nb,c,150\n")
    cfgp = write_config(tmp_path, {
        "fiber_endpoints_csv": str(eps), "fiber_conduits_csv": str(conduits),
        "aggregate_gbps": 5.0})
    out = str(tmp_path / "fiber")
    assert main(["fiber", "--config", cfgp, "--out", out]) == 0
    rows = read_csv(os.path.join(out, "fiber_pruning.csv"))
    assert len(rows) == 1


def test_weather_zero_rain_intervals_match_baseline(pipeline):
    rows = read_csv(pipeline["weather_intervals"])
    doc = designer.load_design(pipeline["design"])
    baseline = {f"{r['src']}|{r['dst']}": r["stretch"] for r in doc["per_pair"]}
    dry = [r for r in rows if r["timestamp"] == "2015-07-01T00:00"]
    assert dry
    for row in dry:
        assert float(row["stretch"]) == baseline[row["pair"]]  # bit-exact


def test_weather_storm_increases_stretch(pipeline):
    rows = read_csv(pipeline["weather_intervals"])
    by_time = {}
    for r in rows:
        by_time.setdefault(r["timestamp"], {})[r["pair"]] = float(r["stretch"])
    dry = by_time["2015-07-01T00:00"]
    storm = by_time["2015-07-01T12:00"]
    assert any(storm[p] > dry[p] + 1e-12 for p in storm)
    assert all(storm[p] >= dry[p] - 1e-12 for p in storm)


def test_weather_golden(pipeline):
    assert_matches_golden(pipeline["weather_pct"], "weather_percentiles.csv")


def test_weather_raster_directory_mode(pipeline, tmp_path):
    # Two grids named by timestamp: one dry, one flooding every link.
    rain_dir = tmp_path / "rain"
    rain_dir.mkdir()
    header = ("ncols 5\nnrows 3\nxllcorner -2.2\nyllcorner -0.2\n"
              "cellsize 0.9\nNODATA_value -9999\n")
    dry = " ".join(["0"] * 5)
    wet = " ".join(["300"] * 5)
    (rain_dir / "2015-08-01T00:00.asc").write_text(header + "\n".join([dry] * 3) + "\n")
    (rain_dir / "2015-08-01T12:00.asc").write_text(header + "\n".join([wet] * 3) + "\n")
    out = str(tmp_path / "weather")
    assert main(["weather", "--config", pipeline["config"], "--out", out,
                 "--set", f"instance_json={pipeline['instance']}",
                 "--set", f"design_json={pipeline['design']}",
                 "--set", "rain_csv=null",
                 "--set", f"rain_rasters={rain_dir}"]) == 0
    rows = read_csv(os.path.join(out, "weather_intervals.csv"))
    doc = designer.load_design(pipeline["design"])
    baseline = {f"{r['src']}|{r['dst']}": r["stretch"] for r in doc["per_pair"]}
    inp = designer.load_design_input(pipeline["instance"])
    fiber_only = designer.evaluate_design(inp, [])
    fiber = {f"{a}|{b}": repr(r.stretch) for (a, b), r in fiber_only.routes.items()}
    for row in rows:
        if row["timestamp"] == "2015-08-01T00:00":
            assert float(row["stretch"]) == float(baseline[row["pair"]])
        else:
            assert float(row["stretch"]) == float(fiber[row["pair"]])


def test_augment_outputs(pipeline):
    with open(pipeline["augment_plan"]) as fh:
        plan = json.load(fh)
    assert "cost" in plan
    assert plan["links"]
    for entry in plan["links"]:
        assert entry["series_count"] >= 1


def test_simulate_outputs(pipeline):
    rows = read_csv(pipeline["flows_csv"])
    assert rows
    for r in rows:
        assert int(r["sent"]) == (int(r["delivered"]) + int(r["dropped"])
                                  + int(r["in_flight"]))
    util = read_csv(pipeline["util_csv"])
    assert all(0.0 <= float(r["utilization"]) <= 1.0 for r in util)


def test_simulate_perturbation_mode(pipeline, tmp_path):
    out = str(tmp_path / "pert")
    assert main(["simulate", "--config", pipeline["config"], "--out", out,
                 "--set", f"instance_json={pipeline['instance']}",
                 "--set", f"design_json={pipeline['design']}",
                 "--set", "sim.sim_seconds=0.01",
                 "--set", "sim.gammas=[0.0, 0.3]",
                 "--set", "sim.loads=[0.2, 0.5]"]) == 0
    rows = read_csv(os.path.join(out, "perturbation.csv"))
    assert len(rows) == 4


def test_geojson_features(pipeline):
    with open(pipeline["geojson"]) as fh:
        gj = json.load(fh)
    assert gj["type"] == "FeatureCollection"
    media = {f["properties"]["medium"] for f in gj["features"]}
    assert media == {"mw", "fiber"}


def test_effective_config_echoed(pipeline):
    echoed = os.path.join(os.path.dirname(pipeline["hops_csv"]), "config_used.json")
    with open(echoed) as fh:
        cfg = json.load(fh)
    assert cfg["seed"] == 7
    assert cfg["site_link_radius_km"] == 50.0


def test_exit_code_on_missing_file(tmp_path):
    cfgp = write_config(tmp_path, demo_config(towers_csv="/nonexistent.csv"))
    assert main(["hopgraph", "--config", cfgp, "--out", str(tmp_path / "o")]) == 1


def test_exit_code_on_empty_tower_file(tmp_path):
    empty = tmp_path / "towers.csv"
    empty.write_text("id,lat,lon,height_m,ground_elevation_m\n")
    cfgp = write_config(tmp_path, demo_config(towers_csv=str(empty)))
    assert main(["hopgraph", "--config", cfgp, "--out", str(tmp_path / "o")]) == 1


def test_exit_code_on_unknown_config_key(tmp_path):
    cfgp = write_config(tmp_path, demo_config())
    assert main(["design", "--config", cfgp, "--out", str(tmp_path / "o"),
                 "--set", "nonsense.key=1"]) == 1


def test_exit_code_on_disconnected_sites(tmp_path):
    # Two sites, no towers, fiber graph with no conduit between them.
    sites = tmp_path / "sites.csv"
    sites.write_text("id,lat,lon,population\np,0,0,10\nq,0,1,10\n")
    eps = tmp_path / "eps.csv"
    eps.write_text("id,lat,lon,population\nf_p,0,0,0\nf_q,0,1,0\nf_r,0.5,0.5,0\n")
    conduits = tmp_path / "conduits.csv"
    conduits.write_text("endpoint_a,endpoint_b,fiber_km\nf_p,f_r,80\n")
    cfgp = write_config(tmp_path, {
        "sites_csv": str(sites), "fiber_endpoints_csv": str(eps),
        "fiber_conduits_csv": str(conduits), "budget": 0.0})
    assert main(["design", "--config", cfgp, "--out", str(tmp_path / "o")]) == 2


def test_usage_error_exits_one():
    assert main(["design", "--config"]) == 1
