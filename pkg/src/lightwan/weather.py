"""Precipitation-driven microwave link failure and rerouting analysis.

Rain attenuation follows the ITU-style power law gamma = k R^alpha dB/km;
a link fails, in a binary fashion, when any of its tower-tower hops
accumulates more attenuation than the configured fade margin. Fiber is
unaffected; per interval, traffic reroutes over whatever survives.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .designer import DesignInput, HybridEvaluator, NetworkDesign
from .fiberbase import StretchStats, stretch_stats, weighted_quantile
from .geo import GeoPoint, geodesic_km
from .graphcore import shortest_path_lengths
from .los import TerrainGrid, _path_samples
from .traffic import Pair

# ITU-R P.838 power-law coefficients for 11 GHz, horizontal polarization.
DEFAULT_K_COEFF = 0.01217
DEFAULT_ALPHA = 1.2571


@dataclass(frozen=True)
class AttenuationModel:
    k_coeff: float = DEFAULT_K_COEFF
    alpha: float = DEFAULT_ALPHA
    fail_threshold_db: float = 30.0  # fade margin; no single standard value, tune per deployment

    def __post_init__(self) -> None:
        if self.k_coeff < 0:
            raise ValueError("k_coeff must be >= 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.fail_threshold_db <= 0:
            raise ValueError("fail_threshold_db must be > 0")


def rain_attenuation_db(hop_km: float, rain_mm_h: float,
                        model: AttenuationModel = AttenuationModel()) -> float:
    """Total attenuation over a hop: k R^alpha dB/km times path length."""
    if hop_km < 0 or rain_mm_h < 0:
        raise ValueError("inputs must be >= 0")
    if rain_mm_h == 0.0:
        return 0.0
    return model.k_coeff * rain_mm_h ** model.alpha * hop_km


def link_id(pair: Pair) -> str:
    return f"{pair[0]}|{pair[1]}"


class RasterRainField:
    """Rain-rate rasters keyed by timestamp (ESRI ASCII layout, mm/h)."""

    def __init__(self, frames: Mapping[str, TerrainGrid]) -> None:
        self.frames = dict(frames)

    def timestamps(self) -> list[str]:
        return sorted(self.frames)

    def hop_rain(self, t: str, link: str, hop_a: GeoPoint, hop_b: GeoPoint) -> float:
        frame = self.frames.get(t)
        if frame is None:
            raise KeyError(f"no rain frame at {t!r}")
        d_km = geodesic_km(hop_a, hop_b)
        n = max(1, math.ceil(d_km))  # ~1 km sampling
        lats, lons, _ = _path_samples(hop_a, hop_b, n)
        return float(np.mean(frame.sample_many(lats, lons)))


class LinkRainSeries:
    """Per-link rain rate series; a value applies along the whole link.

    Links absent from an interval are dry. Ids use the canonical
    "a|b" form of the site pair.
    """

    def __init__(self, data: Mapping[str, Mapping[str, float]]) -> None:
        self.data = {t: dict(rates) for t, rates in data.items()}

    def timestamps(self) -> list[str]:
        return sorted(self.data)

    def hop_rain(self, t: str, link: str, hop_a: GeoPoint, hop_b: GeoPoint) -> float:
        if t not in self.data:
            raise KeyError(f"no rain data at {t!r}")
        return self.data[t].get(link, 0.0)


def load_rain_csv(path: str) -> LinkRainSeries:
    data: dict[str, dict[str, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"timestamp", "link_id", "rain_mm_h"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected header timestamp,link_id,rain_mm_h")
        for row in reader:
            data.setdefault(row["timestamp"], {})[row["link_id"]] = float(row["rain_mm_h"])
    return LinkRainSeries(data)


def load_rain_rasters(paths: Mapping[str, str]) -> RasterRainField:
    """Load rasters from {timestamp: file path} (e.g. files named by timestamp)."""
    from .los import load_terrain_asc
    return RasterRainField({t: load_terrain_asc(p) for t, p in paths.items()})


def failed_links(design: NetworkDesign, tower_paths: Mapping[Pair, Sequence[str]],
                 coords: Mapping[str, GeoPoint], field, t: str,
                 model: AttenuationModel = AttenuationModel()) -> set[Pair]:
    """MW links whose worst hop exceeds the fade margin at time t.

    `tower_paths` gives each built link's node chain (sites included) and
    `coords` the positions of every node on those chains.
    """
    out: set[Pair] = set()
    for pair in design.built_links:
        chain = tower_paths.get(pair)
        if chain is None or len(chain) < 2:
            raise KeyError(f"no tower path recorded for built link {pair}")
        lid = link_id(pair)
        for u, v in zip(chain, chain[1:]):
            a, b = coords[u], coords[v]
            hop_km = geodesic_km(a, b)
            rain = field.hop_rain(t, lid, a, b)
            if rain_attenuation_db(hop_km, rain, model) > model.fail_threshold_db:
                out.add(pair)
                break
    return out


@dataclass(frozen=True)
class IntervalResult:
    timestamp: str
    failed: tuple[Pair, ...]
    per_pair_stretch: dict[Pair, float]
    stats: StretchStats


@dataclass(frozen=True)
class WeatherReport:
    intervals: tuple[IntervalResult, ...]

    def pair_series(self) -> dict[Pair, list[float]]:
        out: dict[Pair, list[float]] = {}
        for interval in self.intervals:
            for pair, s in interval.per_pair_stretch.items():
                out.setdefault(pair, []).append(s)
        return out

    def pair_percentiles(self) -> dict[Pair, dict[str, float]]:
        """Per-pair stretch percentiles over time, including p99."""
        out = {}
        for pair, series in sorted(self.pair_series().items()):
            w = [1.0] * len(series)
            out[pair] = {
                "min": min(series),
                "median": weighted_quantile(series, w, 0.5),
                "p95": weighted_quantile(series, w, 0.95),
                "p99": weighted_quantile(series, w, 0.99),
                "max": max(series),
            }
        return out


def stretch_under_failures(inp: DesignInput, design: NetworkDesign,
                           failed: Iterable[Pair]) -> dict[Pair, float]:
    """Per-pair stretch with the failed MW links removed (fiber always up)."""
    failed_set = set(failed)
    surviving = [p for p in design.built_links if p not in failed_set]
    g = HybridEvaluator(inp).graph_for(surviving)
    ids = inp.site_ids
    out: dict[Pair, float] = {}
    for i, src in enumerate(ids):
        lengths = shortest_path_lengths(g, src)
        for dst in ids[i + 1:]:
            if dst not in lengths:
                out[(src, dst)] = math.inf
            else:
                out[(src, dst)] = lengths[dst] / inp.geodesic[(src, dst)]
    return out


def reroute_and_stats(inp: DesignInput, design: NetworkDesign,
                      failures_by_interval: Sequence[tuple[str, Iterable[Pair]]]) -> WeatherReport:
    """Recompute shortest routes per interval with failed links removed and
    record per-pair stretch plus traffic-weighted summary statistics."""
    intervals = []
    for t, failed in failures_by_interval:
        failed_tuple = tuple(sorted(set(failed)))
        per_pair = stretch_under_failures(inp, design, failed_tuple)
        finite = {k: v for k, v in per_pair.items() if math.isfinite(v)}
        if not finite:
            raise ValueError(f"interval {t}: no connected pairs")
        stats = stretch_stats(finite, inp.traffic,
                              excluded_pairs=len(per_pair) - len(finite))
        intervals.append(IntervalResult(t, failed_tuple, per_pair, stats))
    return WeatherReport(tuple(intervals))


def analyze(inp: DesignInput, design: NetworkDesign, field,
            coords: Mapping[str, GeoPoint],
            model: AttenuationModel = AttenuationModel(),
            timestamps: Sequence[str] | None = None) -> WeatherReport:
    """End-to-end weather run: compute failures per interval, then reroute."""
    times = list(timestamps) if timestamps is not None else field.timestamps()
    failures = [(t, failed_links(design, inp.tower_paths, coords, field, t, model))
                for t in times]
    return reroute_and_stats(inp, design, failures)


def select_intervals(timestamps: Sequence[str], per_day: int = 1, seed: int = 0) -> list[str]:
    """Pick `per_day` timestamps uniformly at random within each calendar
    day (dates are the first 10 chars of ISO timestamps); seeded."""
    if per_day < 1:
        raise ValueError("per_day must be >= 1")
    by_day: dict[str, list[str]] = {}
    for t in sorted(timestamps):
        by_day.setdefault(t[:10], []).append(t)
    rng = np.random.default_rng(seed)
    chosen: list[str] = []
    for day in sorted(by_day):
        group = by_day[day]
        take = min(per_day, len(group))
        picks = rng.choice(len(group), size=take, replace=False)
        chosen.extend(group[i] for i in sorted(picks))
    return chosen


def write_intervals_csv(report: WeatherReport, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "pair", "stretch"])
        for interval in report.intervals:
            for pair, s in sorted(interval.per_pair_stretch.items()):
                writer.writerow([interval.timestamp, link_id(pair), repr(s)])


def write_percentiles_csv(report: WeatherReport, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair", "min", "median", "p95", "p99", "max"])
        for pair, row in report.pair_percentiles().items():
            writer.writerow([link_id(pair)] + [repr(row[k])
                                               for k in ("min", "median", "p95", "p99", "max")])
