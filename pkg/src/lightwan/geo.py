"""Geodesic geometry, latency conversion, and stretch arithmetic.

All functions are pure and operate on immutable values; distances are
great-circle kilometers on a spherical Earth and latencies are one-way
milliseconds (callers double for RTT).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

EARTH_RADIUS_KM = 6371.0
C_VACUUM_KM_S = 299792.458

MEDIUM_MW = "mw"
MEDIUM_FIBER = "fiber"


@dataclass(frozen=True)
class GeoPoint:
    """A surface point in decimal degrees."""

    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class LatencyModel:
    """Propagation model for the two media.

    Light in fiber travels at roughly 2/3 of its vacuum speed, expressed
    here as a 1.5 slowdown factor; microwave through air is effectively
    unslowed.
    """

    c_vacuum: float = C_VACUUM_KM_S  # km/s
    fiber_slowdown: float = 1.5
    mw_slowdown: float = 1.0

    def __post_init__(self) -> None:
        if self.fiber_slowdown < 1.0:
            raise ValueError("fiber_slowdown must be >= 1")
        if self.mw_slowdown < 1.0:
            raise ValueError("mw_slowdown must be >= 1")

    def slowdown(self, medium: str) -> float:
        if medium == MEDIUM_MW:
            return self.mw_slowdown
        if medium == MEDIUM_FIBER:
            return self.fiber_slowdown
        raise ValueError(f"unknown medium {medium!r}")


@dataclass(frozen=True)
class Site:
    """A population center or data-center endpoint."""

    id: str
    location: GeoPoint
    population: float = 0.0


def geodesic_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in km (haversine on a sphere of radius 6371 km)."""
    lat1 = math.radians(a.lat)
    lat2 = math.radians(b.lat)
    dlat = math.radians(b.lat - a.lat)
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def latency_ms(distance_km: float, medium: str, model: LatencyModel = LatencyModel()) -> float:
    """One-way propagation latency in ms over `distance_km` of the given medium."""
    if distance_km < 0:
        raise ValueError("distance must be >= 0")
    return distance_km * model.slowdown(medium) / model.c_vacuum * 1000.0


def c_latency_ms(a: GeoPoint, b: GeoPoint, model: LatencyModel = LatencyModel()) -> float:
    """Physical lower bound: geodesic distance divided by the vacuum speed of light."""
    return geodesic_km(a, b) / model.c_vacuum * 1000.0


def stretch(path_latency_ms: float, src: GeoPoint, dst: GeoPoint,
            model: LatencyModel = LatencyModel()) -> float:
    """Ratio of an achieved one-way latency to the pair's c-latency.

    Raises ValueError for coincident endpoints, where the ratio is undefined.
    """
    base = c_latency_ms(src, dst, model)
    if base == 0.0:
        raise ValueError("stretch undefined for coincident endpoints")
    return path_latency_ms / base


def load_sites_csv(path: str) -> list[Site]:
    """Read sites from a CSV with header id,lat,lon,population (population optional)."""
    sites: list[Site] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "lat", "lon"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected header with id,lat,lon[,population]")
        for row in reader:
            pop = float(row["population"]) if row.get("population") else 0.0
            sites.append(Site(row["id"], GeoPoint(float(row["lat"]), float(row["lon"])), pop))
    ids = [s.id for s in sites]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate site ids")
    return sites
