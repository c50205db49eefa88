"""Line-of-sight feasibility of tower-tower microwave hops over terrain.

A hop is feasible when the straight line between the antenna altitudes
clears, at every sample along the great-circle path, the terrain surface
plus the refraction-adjusted Earth bulge plus the first Fresnel zone plus
a configurable obstruction margin.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .geo import GeoPoint, geodesic_km
from .graphcore import WeightedGraph


@dataclass(frozen=True)
class Tower:
    """An antenna-bearing structure from an inventory."""

    id: str
    location: GeoPoint
    height_m: float
    ground_elevation_m: float = 0.0

    def __post_init__(self) -> None:
        if self.height_m <= 0:
            raise ValueError(f"tower {self.id!r}: height must be > 0")


@dataclass(frozen=True)
class LosParams:
    """Parameters of the hop-feasibility model.

    Defaults follow common practice for 11 GHz licensed microwave: K=1.3
    effective-Earth refraction, 100 km maximum range, antennae mounted at
    the tower top, terrain sampled at the raster's native 30 m step.
    """

    f_ghz: float = 11.0
    k_factor: float = 1.3
    max_range_km: float = 100.0
    usable_height_fraction: float = 1.0
    obstruction_margin_m: float = 0.0
    sample_step_m: float = 30.0

    def __post_init__(self) -> None:
        if self.f_ghz <= 0:
            raise ValueError("f_ghz must be > 0")
        if self.k_factor <= 0:
            raise ValueError("k_factor must be > 0")
        if self.max_range_km <= 0:
            raise ValueError("max_range_km must be > 0")
        if not 0 < self.usable_height_fraction <= 1:
            raise ValueError("usable_height_fraction must be in (0, 1]")
        if self.sample_step_m <= 0:
            raise ValueError("sample_step_m must be > 0")


@dataclass(frozen=True)
class Hop:
    """A feasible tower-tower segment; length is the base geodesic."""

    tower_a: str
    tower_b: str
    length_km: float


@dataclass
class HopGraph:
    """Towers plus the feasible hops between them."""

    towers: dict[str, Tower]
    hops: list[Hop]

    def graph(self) -> WeightedGraph:
        g = WeightedGraph()
        for tid in self.towers:
            g.add_node(tid)
        for hop in self.hops:
            g.add_edge(hop.tower_a, hop.tower_b, hop.length_km)
        return g


class TerrainGrid:
    """Surface elevation raster (terrain plus clutter) in ESRI ASCII layout.

    `values` is row-major with row 0 the northernmost row; cells are
    squares of `cellsize` degrees anchored at the grid's lower-left
    corner. Sampling interpolates bilinearly between cell centers and
    clamps to the outermost centers near the border, so it is defined
    everywhere inside the bounding box.
    """

    def __init__(self, values: np.ndarray, xllcorner: float, yllcorner: float,
                 cellsize: float, nodata: float = -9999.0) -> None:
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.size == 0:
            raise ValueError("terrain values must be a non-empty 2-D array")
        if cellsize <= 0:
            raise ValueError("cellsize must be > 0")
        self.values = np.where(values == nodata, np.nan, values)
        self.xllcorner = float(xllcorner)
        self.yllcorner = float(yllcorner)
        self.cellsize = float(cellsize)
        self.nodata = float(nodata)
        self.nrows, self.ncols = values.shape

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(lon_min, lat_min, lon_max, lat_max)."""
        return (self.xllcorner, self.yllcorner,
                self.xllcorner + self.ncols * self.cellsize,
                self.yllcorner + self.nrows * self.cellsize)

    def contains(self, point: GeoPoint) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 <= point.lon <= x1 and y0 <= point.lat <= y1

    def sample_many(self, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
        """Bilinear elevation at each (lat, lon); raises outside the box or on NODATA."""
        lats = np.asarray(lats, dtype=float)
        lons = np.asarray(lons, dtype=float)
        x0, y0, x1, y1 = self.bounds
        if np.any(lons < x0) or np.any(lons > x1) or np.any(lats < y0) or np.any(lats > y1):
            raise ValueError("sample outside terrain bounds")
        # Fractional index relative to cell centers, rows counted from the bottom.
        fx = (lons - self.xllcorner) / self.cellsize - 0.5
        fy = (lats - self.yllcorner) / self.cellsize - 0.5
        j0 = np.clip(np.floor(fx).astype(int), 0, max(self.ncols - 2, 0))
        i0 = np.clip(np.floor(fy).astype(int), 0, max(self.nrows - 2, 0))
        tx = np.clip(fx - j0, 0.0, 1.0)
        ty = np.clip(fy - i0, 0.0, 1.0)
        j1 = np.minimum(j0 + 1, self.ncols - 1)
        i1 = np.minimum(i0 + 1, self.nrows - 1)
        r0 = self.nrows - 1 - i0
        r1 = self.nrows - 1 - i1
        v = ((1 - ty) * ((1 - tx) * self.values[r0, j0] + tx * self.values[r0, j1])
             + ty * ((1 - tx) * self.values[r1, j0] + tx * self.values[r1, j1]))
        if np.any(np.isnan(v)):
            raise ValueError("sample touches NODATA cells")
        return v

    def sample(self, point: GeoPoint) -> float:
        return float(self.sample_many(np.array([point.lat]), np.array([point.lon]))[0])


def load_terrain_asc(path: str) -> TerrainGrid:
    """Read an ESRI ASCII grid (ncols/nrows/xllcorner/yllcorner/cellsize/NODATA_value)."""
    header: dict[str, float] = {}
    rows: list[list[float]] = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            key = parts[0].lower()
            if key in ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"):
                header[key] = float(parts[1])
            else:
                rows.append([float(tok) for tok in parts])
    for req in ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize"):
        if req not in header:
            raise ValueError(f"{path}: missing header field {req}")
    values = np.array([v for row in rows for v in row], dtype=float)
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    if values.size != ncols * nrows:
        raise ValueError(f"{path}: expected {ncols * nrows} values, found {values.size}")
    return TerrainGrid(values.reshape(nrows, ncols), header["xllcorner"],
                       header["yllcorner"], header["cellsize"],
                       header.get("nodata_value", -9999.0))


def fresnel_radius_m(d_km: float, f_ghz: float) -> float:
    """Mid-hop first-Fresnel-zone width in meters for a hop of d_km at f_ghz."""
    if d_km < 0:
        raise ValueError("distance must be >= 0")
    if f_ghz <= 0:
        raise ValueError("frequency must be > 0")
    return 8.7 * math.sqrt(d_km) / math.sqrt(f_ghz)


def earth_bulge_m(d1_km: float, d2_km: float, k_factor: float) -> float:
    """Effective Earth-curvature obstruction height at a point d1/d2 km from the ends.

    K scales the Earth radius for atmospheric refraction; at the midpoint
    of a hop of length D this is D^2/(50.96 K) m.
    """
    if d1_km < 0 or d2_km < 0:
        raise ValueError("distances must be >= 0")
    if k_factor <= 0:
        raise ValueError("k_factor must be > 0")
    return d1_km * d2_km / (12.74 * k_factor)


def _unit_vector(p: GeoPoint) -> np.ndarray:
    lat = math.radians(p.lat)
    lon = math.radians(p.lon)
    return np.array([math.cos(lat) * math.cos(lon),
                     math.cos(lat) * math.sin(lon),
                     math.sin(lat)])


def _path_samples(a: GeoPoint, b: GeoPoint, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """n+1 great-circle samples a..b as (lats, lons, fractions).

    Built from integer endpoint weights so that the sample set is
    bit-identical under endpoint swap, keeping feasibility symmetric.
    """
    va = _unit_vector(a)
    vb = _unit_vector(b)
    omega = math.acos(min(1.0, max(-1.0, float(np.dot(va, vb)))))
    idx = np.arange(n + 1)
    wb = idx / n
    wa = (n - idx) / n
    if omega < 1e-12:
        pts = np.outer(wa, va) + np.outer(wb, vb)
        pts /= np.linalg.norm(pts, axis=1)[:, None]
    else:
        pts = (np.outer(np.sin(wa * omega), va) + np.outer(np.sin(wb * omega), vb)) / math.sin(omega)
    lats = np.degrees(np.arcsin(np.clip(pts[:, 2], -1.0, 1.0)))
    lons = np.degrees(np.arctan2(pts[:, 1], pts[:, 0]))
    return lats, lons, wb


def hop_feasible(a: Tower, b: Tower, terrain: TerrainGrid, p: LosParams) -> bool:
    """True iff the a-b hop is within range and its Fresnel zone is fully clear.

    Clearance is required at every terrain sample: the antenna-to-antenna
    line must sit at or above terrain + Earth bulge + Fresnel width +
    obstruction margin. The Fresnel width along the path uses the
    standard two-segment form 17.4 sqrt(d1 d2 / (D f)) m, which reduces
    to `fresnel_radius_m` at the midpoint.
    """
    if not terrain.contains(a.location) or not terrain.contains(b.location):
        raise ValueError("tower outside terrain bounds")
    d_km = geodesic_km(a.location, b.location)
    if d_km > p.max_range_km:
        return False
    if d_km == 0.0:
        return True
    n = max(1, math.ceil(d_km * 1000.0 / p.sample_step_m))
    lats, lons, frac = _path_samples(a.location, b.location, n)
    elev = terrain.sample_many(lats, lons)
    # frac[i] = i/n and frac[::-1][i] = (n-i)/n, so every term below is
    # bitwise identical under endpoint swap and feasibility is symmetric.
    d1 = d_km * frac
    d2 = d_km * frac[::-1]
    bulge = d1 * d2 / (12.74 * p.k_factor)
    fresnel = 2.0 * 8.7 * np.sqrt(d1 * d2 / d_km) / math.sqrt(p.f_ghz)
    alt_a = a.ground_elevation_m + p.usable_height_fraction * a.height_m
    alt_b = b.ground_elevation_m + p.usable_height_fraction * b.height_m
    line = alt_a * frac[::-1] + alt_b * frac
    needed = elev + bulge + fresnel + p.obstruction_margin_m
    return bool(np.all(line >= needed))


def build_hop_graph(towers: list[Tower], terrain: TerrainGrid, p: LosParams) -> HopGraph:
    """All feasible tower-tower hops; deterministic for fixed inputs."""
    if not towers:
        raise ValueError("empty tower list")
    ids = [t.id for t in towers]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate tower ids")
    ordered = sorted(towers, key=lambda t: t.id)
    hops: list[Hop] = []
    for i, ta in enumerate(ordered):
        for tb in ordered[i + 1:]:
            d = geodesic_km(ta.location, tb.location)
            if d > p.max_range_km:
                continue
            if hop_feasible(ta, tb, terrain, p):
                hops.append(Hop(ta.id, tb.id, d))
    return HopGraph({t.id: t for t in ordered}, hops)


def cull_towers(towers: list[Tower], min_height_m: float, grid_cell_deg: float,
                max_per_cell: int, seed: int) -> list[Tower]:
    """Height-filter then per-cell uniform subsampling, deterministic per seed."""
    if max_per_cell <= 0:
        raise ValueError("max_per_cell must be > 0")
    if grid_cell_deg <= 0:
        raise ValueError("grid_cell_deg must be > 0")
    tall = [t for t in towers if t.height_m >= min_height_m]
    cells: dict[tuple[int, int], list[Tower]] = {}
    for t in tall:
        key = (math.floor(t.location.lat / grid_cell_deg),
               math.floor(t.location.lon / grid_cell_deg))
        cells.setdefault(key, []).append(t)
    rng = np.random.default_rng(seed)
    kept: list[Tower] = []
    for key in sorted(cells):
        group = sorted(cells[key], key=lambda t: t.id)
        if len(group) <= max_per_cell:
            kept.extend(group)
        else:
            picks = rng.choice(len(group), size=max_per_cell, replace=False)
            kept.extend(group[i] for i in sorted(picks))
    return sorted(kept, key=lambda t: t.id)


def load_towers_csv(path: str, terrain: TerrainGrid | None = None) -> list[Tower]:
    """Read a tower inventory: id,lat,lon,height_m[,ground_elevation_m].

    When ground elevation is absent it is sampled from `terrain`.
    """
    towers: list[Tower] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "lat", "lon", "height_m"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected header id,lat,lon,height_m[,ground_elevation_m]")
        for row in reader:
            loc = GeoPoint(float(row["lat"]), float(row["lon"]))
            ground = row.get("ground_elevation_m")
            if ground is None or ground == "":
                if terrain is None:
                    raise ValueError(f"{path}: tower {row['id']} lacks ground elevation "
                                     "and no terrain was supplied")
                elev = terrain.sample(loc)
            else:
                elev = float(ground)
            towers.append(Tower(row["id"], loc, float(row["height_m"]), elev))
    ids = [t.id for t in towers]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate tower ids")
    return towers


def save_hops_csv(hop_graph: HopGraph, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tower_a", "tower_b", "length_km"])
        for hop in sorted(hop_graph.hops, key=lambda h: (h.tower_a, h.tower_b)):
            writer.writerow([hop.tower_a, hop.tower_b, f"{hop.length_km:.6f}"])


def load_hops_csv(path: str, towers: list[Tower]) -> HopGraph:
    by_id = {t.id: t for t in towers}
    hops: list[Hop] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"tower_a", "tower_b", "length_km"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected header tower_a,tower_b,length_km")
        for row in reader:
            if row["tower_a"] not in by_id or row["tower_b"] not in by_id:
                raise ValueError(f"{path}: hop references unknown tower")
            hops.append(Hop(row["tower_a"], row["tower_b"], float(row["length_km"])))
    return HopGraph(by_id, hops)
