import math

import numpy as np
import pytest

from lightwan import los
from lightwan.geo import GeoPoint, geodesic_km
from lightwan.los import LosParams, TerrainGrid, Tower

KM_PER_DEG = math.pi * 6371.0 / 180.0  # equatorial degree of longitude


def flat_terrain(elevation=0.0, half_extent_deg=3.0, cellsize=0.05):
    n = int(2 * half_extent_deg / cellsize)
    return TerrainGrid(np.full((n, n), elevation), -half_extent_deg, -half_extent_deg, cellsize)


def tower_at(tid, lat, lon, height=100.0, ground=0.0):
    return Tower(tid, GeoPoint(lat, lon), height, ground)


def test_fresnel_paper_value():
    assert los.fresnel_radius_m(1.0, 1.0) == pytest.approx(8.7, rel=1e-12)


def test_fresnel_zero_distance():
    assert los.fresnel_radius_m(0.0, 11.0) == 0.0


def test_fresnel_direct_evaluation():
    assert los.fresnel_radius_m(100.0, 11.0) == pytest.approx(8.7 * 10.0 / math.sqrt(11.0), rel=1e-12)


def test_fresnel_monotone_and_continuous_at_zero():
    prev = 0.0
    for d in np.linspace(0.0, 120.0, 200):
        r = los.fresnel_radius_m(float(d), 11.0)
        assert r >= prev
        prev = r
    assert los.fresnel_radius_m(1e-12, 11.0) < 1e-5


def test_fresnel_rejects_bad_inputs():
    with pytest.raises(ValueError):
        los.fresnel_radius_m(-1.0, 11.0)
    with pytest.raises(ValueError):
        los.fresnel_radius_m(1.0, 0.0)


def test_bulge_paper_midpoint_value():
    v = los.earth_bulge_m(0.5, 0.5, 1.0)
    assert 0.0195 <= v <= 0.0200


def test_bulge_endpoint_zero():
    assert los.earth_bulge_m(0.0, 37.0, 1.3) == 0.0


def test_bulge_direct_evaluation():
    assert los.earth_bulge_m(50.0, 50.0, 1.3) == pytest.approx(2500.0 / (12.74 * 1.3), rel=1e-12)


def test_bulge_monotone_in_distance():
    prev = -1.0
    for d in np.linspace(0.0, 50.0, 100):
        v = los.earth_bulge_m(float(d), float(d), 1.3)
        assert v > prev or (v == 0.0 and prev <= 0.0)
        prev = v


def test_bulge_rejects_negative():
    with pytest.raises(ValueError):
        los.earth_bulge_m(-0.1, 1.0, 1.3)


def test_terrain_bilinear_interpolation():
    # Linear-in-x surface is reproduced exactly by bilinear sampling.
    vals = np.tile(np.arange(10, dtype=float), (10, 1)) * 10.0
    grid = TerrainGrid(vals, 0.0, 0.0, 0.1)
    mid = grid.sample(GeoPoint(0.5, 0.35))
    assert mid == pytest.approx(30.0, rel=1e-12)
    with pytest.raises(ValueError):
        grid.sample(GeoPoint(0.5, 2.0))


def test_terrain_nodata_rejected_on_sample():
    vals = np.zeros((4, 4))
    vals[2, 2] = -9999.0
    grid = TerrainGrid(vals, 0.0, 0.0, 0.1, nodata=-9999.0)
    with pytest.raises(ValueError):
        grid.sample(GeoPoint(0.15, 0.25))


def test_load_terrain_asc(tmp_path):
    p = tmp_path / "t.asc"
    p.write_text(
        "ncols 3\nnrows 2\nxllcorner -1.0\nyllcorner -1.0\ncellsize 1.0\n"
        "NODATA_value -9999\n"
        "5 6 7\n1 2 3\n")
    g = los.load_terrain_asc(str(p))
    assert g.ncols == 3 and g.nrows == 2
    # Row 0 of the file is the northern row.
    assert g.sample(GeoPoint(-0.5, -0.5)) == pytest.approx(1.0)
    assert g.sample(GeoPoint(0.5, -0.5)) == pytest.approx(5.0)


def test_hop_feasible_flat_terrain():
    terr = flat_terrain()
    a = tower_at("a", 0.0, 0.0)
    b = tower_at("b", 0.0, 10.0 / KM_PER_DEG)
    assert geodesic_km(a.location, b.location) == pytest.approx(10.0, rel=1e-3)
    assert los.hop_feasible(a, b, terr, LosParams())


def test_hop_blocked_by_ridge():
    terr = flat_terrain()
    # 200 m ridge column at the midpoint of the 10 km hop.
    lon_mid = 5.0 / KM_PER_DEG
    j = int((lon_mid - terr.xllcorner) / terr.cellsize)
    terr.values[:, j - 1:j + 2] = 200.0
    a = tower_at("a", 0.0, 0.0)
    b = tower_at("b", 0.0, 10.0 / KM_PER_DEG)
    assert not los.hop_feasible(a, b, terr, LosParams())


def test_hop_range_gate():
    terr = flat_terrain(half_extent_deg=1.0, cellsize=0.05)
    a = tower_at("a", 0.0, 0.0, height=500.0)
    b = tower_at("b", 0.0, 101.0 / KM_PER_DEG)
    assert not los.hop_feasible(a, b, terr, LosParams(max_range_km=100.0))


def test_hop_outside_terrain_raises():
    terr = flat_terrain(half_extent_deg=0.5)
    a = tower_at("a", 0.0, 0.0)
    b = tower_at("b", 0.0, 2.0)
    with pytest.raises(ValueError):
        los.hop_feasible(a, b, terr, LosParams())


def test_hop_symmetry_random_pairs():
    rng = np.random.default_rng(21)
    terr = flat_terrain()
    terr.values[:] = rng.uniform(0.0, 60.0, size=terr.values.shape)
    params = LosParams(sample_step_m=200.0)
    for _ in range(40):
        a = tower_at("a", float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)),
                     height=float(rng.uniform(40, 120)),
                     ground=float(rng.uniform(0, 50)))
        b = tower_at("b", float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)),
                     height=float(rng.uniform(40, 120)),
                     ground=float(rng.uniform(0, 50)))
        assert los.hop_feasible(a, b, terr, params) == los.hop_feasible(b, a, terr, params)


def test_hop_monotone_in_constraints():
    # Tightening height fraction, range, or raising terrain can only lose hops.
    rng = np.random.default_rng(5)
    terr = flat_terrain()
    terr.values[:] = rng.uniform(0.0, 40.0, size=terr.values.shape)
    raised = flat_terrain()
    raised.values[:] = terr.values + rng.uniform(0.0, 40.0, size=terr.values.shape)
    towers = [tower_at(f"t{i}", float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)),
                       height=float(rng.uniform(30, 90))) for i in range(12)]
    loose = LosParams(sample_step_m=150.0)
    for tight in (LosParams(sample_step_m=150.0, usable_height_fraction=0.5),
                  LosParams(sample_step_m=150.0, max_range_km=40.0)):
        for i, a in enumerate(towers):
            for b in towers[i + 1:]:
                if los.hop_feasible(a, b, terr, tight):
                    assert los.hop_feasible(a, b, terr, loose)
    for i, a in enumerate(towers):
        for b in towers[i + 1:]:
            if los.hop_feasible(a, b, raised, loose):
                assert los.hop_feasible(a, b, terr, loose)


def test_build_hop_graph_single_tower():
    terr = flat_terrain()
    hg = los.build_hop_graph([tower_at("solo", 0.0, 0.0)], terr, LosParams())
    assert hg.hops == []


def test_build_hop_graph_collinear_range_arithmetic():
    terr = flat_terrain(half_extent_deg=2.5, cellsize=0.1)
    spacing = 60.0 / KM_PER_DEG
    towers = [tower_at(f"t{i}", 0.0, (i - 1) * spacing, height=400.0) for i in range(3)]
    hg = los.build_hop_graph(towers, terr, LosParams(max_range_km=100.0))
    edges = {(h.tower_a, h.tower_b) for h in hg.hops}
    assert edges == {("t0", "t1"), ("t1", "t2")}


def test_build_hop_graph_matches_bruteforce():
    rng = np.random.default_rng(33)
    terr = flat_terrain()
    terr.values[:] = rng.uniform(0.0, 80.0, size=terr.values.shape)
    towers = []
    for i in range(10):
        for j in range(10):
            towers.append(tower_at(f"g{i}{j}", -0.9 + 0.2 * i, -0.9 + 0.2 * j,
                                   height=float(rng.uniform(25, 110))))
    params = LosParams(sample_step_m=250.0, max_range_km=40.0)
    hg = los.build_hop_graph(towers, terr, params)
    expected = set()
    for i, a in enumerate(towers):
        for b in towers[i + 1:]:
            if los.hop_feasible(a, b, terr, params):
                key = (min(a.id, b.id), max(a.id, b.id))
                expected.add(key)
    got = {(h.tower_a, h.tower_b) for h in hg.hops}
    assert got == expected


def test_cull_all_below_height():
    towers = [tower_at(f"t{i}", 0.0, 0.1 * i, height=50.0) for i in range(5)]
    assert los.cull_towers(towers, 100.0, 0.5, 50, seed=1) == []


def test_cull_under_threshold_keeps_all():
    towers = [tower_at(f"t{i}", 0.01 * i, 0.01 * i, height=150.0) for i in range(10)]
    assert len(los.cull_towers(towers, 100.0, 0.5, 50, seed=1)) == 10


def test_cull_deterministic_sampling():
    towers = [tower_at(f"t{i:03d}", 0.001 * (i % 7), 0.002 * (i % 11), height=150.0)
              for i in range(200)]
    first = los.cull_towers(towers, 100.0, 0.5, 50, seed=42)
    second = los.cull_towers(towers, 100.0, 0.5, 50, seed=42)
    assert len(first) == 50
    assert [t.id for t in first] == [t.id for t in second]
    other = los.cull_towers(towers, 100.0, 0.5, 50, seed=43)
    assert [t.id for t in other] != [t.id for t in first]


def test_towers_csv_roundtrip(tmp_path):
    terr = flat_terrain(elevation=12.0)
    p = tmp_path / "towers.csv"
    p.write_text("id,lat,lon,height_m,ground_elevation_m\n"
                 "a,0.0,0.0,120,\n"
                 "b,0.1,0.1,80,44.0\n")
    towers = los.load_towers_csv(str(p), terrain=terr)
    assert towers[0].ground_elevation_m == pytest.approx(12.0)
    assert towers[1].ground_elevation_m == 44.0


def test_hops_csv_roundtrip(tmp_path):
    terr = flat_terrain()
    towers = [tower_at("a", 0.0, 0.0), tower_at("b", 0.0, 0.2)]
    hg = los.build_hop_graph(towers, terr, LosParams())
    path = tmp_path / "hops.csv"
    los.save_hops_csv(hg, str(path))
    back = los.load_hops_csv(str(path), towers)
    assert {(h.tower_a, h.tower_b) for h in back.hops} == \
        {(h.tower_a, h.tower_b) for h in hg.hops}
