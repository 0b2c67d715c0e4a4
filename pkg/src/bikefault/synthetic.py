"""Synthetic labeled fleets with the qualitative signatures of faulty bikes.

Normal bikes ride often (higher trip rate), move smoothly between trip
endpoints, and spread over the whole service area.  Faulty bikes ride
rarely, produce short fragmented trips with dense jitter clusters near
their endpoints (intensity controlled by ``fragmentation``), and sit
preferentially in the outer rings of the service area.  Output is the
exact CSV trio the parsers consume, plus a manifest of empirical
per-class statistics.  Generation is deterministic per seed, with an
independent substream per bike.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .data_model import (GeoCoord, GpsPoint, Status, TripRecord,
                         write_gps, write_labels, write_trips)
from .feature_engine import haversine_km

WINDOW_START = datetime(2021, 6, 1, tzinfo=timezone.utc)
MAX_TRIPS = 20          # observed ceiling for per-bike trip counts
KEEPALIVE_S = 4 * 3600  # idle bikes still ping every few hours


@dataclass(frozen=True)
class BoundingBox:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not (self.lat_min < self.lat_max and self.lon_min < self.lon_max):
            raise ValueError("bounding box is empty or inverted")

    @property
    def center(self) -> tuple[float, float]:
        return (self.lat_min + self.lat_max) / 2.0, (self.lon_min + self.lon_max) / 2.0


@dataclass(frozen=True)
class SynthConfig:
    n_bikes: int = 200
    faulty_fraction: float = 0.15
    days: int = 3
    lambda_normal: float = 8.0
    lambda_faulty: float = 2.0
    fragmentation: float = 0.5
    bbox: BoundingBox = BoundingBox(30.50, 30.80, 103.90, 104.25)
    ring_weights: tuple[float, float, float] = (0.1, 0.35, 0.55)
    gps_period_s: int = 120
    seed: int = 0

    def __post_init__(self):
        if self.n_bikes < 1:
            raise ValueError(f"n_bikes must be >= 1, got {self.n_bikes}")
        if not 0.0 < self.faulty_fraction < 1.0:
            raise ValueError(f"faulty_fraction must be in (0, 1), got {self.faulty_fraction}")
        if self.days < 1:
            raise ValueError(f"days must be >= 1, got {self.days}")
        if self.lambda_normal <= 0 or self.lambda_faulty <= 0:
            raise ValueError("trip rates must be positive")
        if not 0.0 <= self.fragmentation <= 1.0:
            raise ValueError(f"fragmentation must be in [0, 1], got {self.fragmentation}")
        if self.gps_period_s < 1:
            raise ValueError(f"gps_period_s must be >= 1, got {self.gps_period_s}")
        if len(self.ring_weights) != 3 or min(self.ring_weights) < 0 or sum(self.ring_weights) == 0:
            raise ValueError("ring_weights must be 3 nonnegative values with a positive sum")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ring_weights"] = list(self.ring_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if isinstance(d.get("bbox"), dict):
            d["bbox"] = BoundingBox(**d["bbox"])
        if "ring_weights" in d:
            d["ring_weights"] = tuple(d["ring_weights"])
        return cls(**d)


@dataclass
class FleetManifest:
    config: dict
    window: tuple[str, str]
    class_stats: dict

    def to_dict(self) -> dict:
        return {"config": self.config, "window": list(self.window),
                "class_stats": self.class_stats}


def _clip_coord(bbox: BoundingBox, lat: float, lon: float) -> GeoCoord:
    return GeoCoord(float(min(max(lat, bbox.lat_min), bbox.lat_max)),
                    float(min(max(lon, bbox.lon_min), bbox.lon_max)))


def _home_location(cfg: SynthConfig, rng: np.random.Generator, faulty: bool) -> tuple[float, float]:
    """Normal bikes anywhere; faulty bikes drawn toward the outer rings."""
    bbox = cfg.bbox
    if not faulty:
        return (rng.uniform(bbox.lat_min, bbox.lat_max),
                rng.uniform(bbox.lon_min, bbox.lon_max))
    c_lat, c_lon = bbox.center
    r_max = min(bbox.lat_max - c_lat, bbox.lon_max - c_lon)
    weights = np.asarray(cfg.ring_weights, dtype=np.float64)
    band = rng.choice(3, p=weights / weights.sum())
    radius = r_max * (band + rng.uniform()) / 3.0
    angle = rng.uniform(0.0, 2.0 * math.pi)
    return c_lat + radius * math.cos(angle), c_lon + radius * math.sin(angle)


def _smooth_path(rng: np.random.Generator, start: tuple[float, float],
                 end: tuple[float, float], n_points: int,
                 wobble: float) -> np.ndarray:
    """Linear movement start -> end with a Brownian-bridge wobble."""
    frac = np.linspace(0.0, 1.0, n_points)
    lats = start[0] + (end[0] - start[0]) * frac
    lons = start[1] + (end[1] - start[1]) * frac
    if n_points > 2:
        noise = rng.normal(0.0, wobble, size=(n_points, 2)).cumsum(axis=0)
        bridge = noise - frac[:, None] * noise[-1]
        lats = lats + bridge[:, 0]
        lons = lons + bridge[:, 1]
    return np.column_stack([lats, lons])


def _generate_bike(cfg: SynthConfig, rng: np.random.Generator, bike: str, faulty: bool,
                   t0: datetime, t1: datetime) -> tuple[list[TripRecord], list[GpsPoint]]:
    window_s = (t1 - t0).total_seconds()
    lam = cfg.lambda_faulty if faulty else cfg.lambda_normal
    n_trips = int(min(rng.poisson(lam), MAX_TRIPS))

    # faulty riding degrades with fragmentation intensity: at 0 it looks like
    # normal riding (overlapping classes), at 1 trips are short stutters
    if faulty:
        f = cfg.fragmentation
        durations = rng.uniform(60.0 * f + 300.0 * (1 - f), 480.0 * f + 1500.0 * (1 - f),
                                size=n_trips)
        hops_km = rng.uniform(0.05 * f + 0.5 * (1 - f), 0.4 * f + 3.0 * (1 - f),
                              size=n_trips)
    else:
        durations = rng.uniform(5 * 60.0, 25 * 60.0, size=n_trips)
        hops_km = rng.uniform(0.5, 3.0, size=n_trips)

    starts = np.sort(rng.uniform(0.0, np.maximum(window_s - durations, 0.0)))
    home = _home_location(cfg, rng, faulty)
    here = home
    trips: list[TripRecord] = []
    points: list[GpsPoint] = []
    anchors: list[tuple[float, tuple[float, float]]] = [(0.0, home)]
    busy: list[tuple[float, float]] = []

    for k in range(n_trips):
        start_t = t0 + timedelta(seconds=float(starts[k]))
        end_t = start_t + timedelta(seconds=float(durations[k]))
        bearing = rng.uniform(0.0, 2.0 * math.pi)
        step_deg = hops_km[k] / 111.0
        there = (here[0] + step_deg * math.cos(bearing), here[1] + step_deg * math.sin(bearing))

        n_samples = max(2, int(durations[k] // cfg.gps_period_s) + 1)
        wobble = 2e-4 if not faulty else 2e-4 + 8e-4 * cfg.fragmentation
        path = _smooth_path(rng, here, there, n_samples, wobble)
        times = np.linspace(0.0, durations[k], n_samples)
        for j in range(n_samples):
            ts = start_t + timedelta(seconds=float(times[j]))
            points.append(GpsPoint(bike, ts.replace(microsecond=0),
                                   _clip_coord(cfg.bbox, path[j, 0], path[j, 1])))

        start_coord = _clip_coord(cfg.bbox, here[0], here[1])
        end_coord = _clip_coord(cfg.bbox, path[-1, 0], path[-1, 1])
        trips.append(TripRecord(bike, start_t.replace(microsecond=0),
                                end_t.replace(microsecond=0), start_coord, end_coord))

        if faulty and cfg.fragmentation > 0.0:
            # dense point cluster at the trip end; count and spread grow with intensity
            n_cluster = 2 + int(round(7 * cfg.fragmentation))
            spread = 1e-4 + 1.2e-3 * cfg.fragmentation
            offsets = rng.normal(0.0, spread, size=(n_cluster, 2))
            for j in range(n_cluster):
                ts = end_t + timedelta(seconds=float((j + 1) * cfg.gps_period_s))
                if ts > t1:
                    break
                points.append(GpsPoint(bike, ts.replace(microsecond=0),
                                       _clip_coord(cfg.bbox, end_coord.lat + offsets[j, 0],
                                                   end_coord.lon + offsets[j, 1])))
        here = (end_coord.lat, end_coord.lon)
        anchors.append((float(starts[k] + durations[k]), here))
        busy.append((float(starts[k]), float(starts[k] + durations[k])))

    # keep-alive pings from wherever the bike is parked, so idle bikes
    # (and idle stretches) are still observed
    ping_t = 0.0
    while ping_t <= window_s:
        if not any(b0 <= ping_t <= b1 for b0, b1 in busy):
            parked = home
            for at, loc in anchors:
                if at <= ping_t:
                    parked = loc
            ts = t0 + timedelta(seconds=ping_t)
            jitter = rng.normal(0.0, 2e-5, size=2)
            points.append(GpsPoint(bike, ts.replace(microsecond=0),
                                   _clip_coord(cfg.bbox, parked[0] + jitter[0],
                                               parked[1] + jitter[1])))
        ping_t += KEEPALIVE_S

    points.sort(key=lambda p: p.timestamp)
    return trips, points


def generate_fleet(cfg: SynthConfig, out_dir) -> FleetManifest:
    """Write trips.csv, gps.csv, labels.csv, and manifest.json for a fleet.

    Exactly floor(n_bikes * faulty_fraction) bikes are labeled Unusable.
    Byte-identical output for a fixed config.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = WINDOW_START
    t1 = t0 + timedelta(days=cfg.days)

    n_faulty = int(math.floor(cfg.n_bikes * cfg.faulty_fraction))
    fleet_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xF1EE7]))
    faulty_idx = set(fleet_rng.permutation(cfg.n_bikes)[:n_faulty].tolist())

    all_trips: list[TripRecord] = []
    all_points: list[GpsPoint] = []
    labels: list[tuple[str, Status]] = []
    per_class: dict[Status, list[tuple[int, float, float]]] = {s: [] for s in Status}

    for i in range(cfg.n_bikes):
        bike = f"B{i:05d}"
        faulty = i in faulty_idx
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, i]))
        trips, points = _generate_bike(cfg, rng, bike, faulty, t0, t1)
        all_trips.extend(trips)
        all_points.extend(points)
        status = Status.UNUSABLE if faulty else Status.NORMAL
        labels.append((bike, status))
        dist = sum(haversine_km(a.coord, b.coord) for a, b in zip(points, points[1:]))
        total_min = sum(t.duration_s for t in trips) / 60.0
        per_class[status].append((len(trips), dist, total_min))

    write_trips(out_dir / "trips.csv", all_trips)
    write_gps(out_dir / "gps.csv", all_points)
    write_labels(out_dir / "labels.csv", labels)

    class_stats = {}
    for status, rows in per_class.items():
        if not rows:
            continue
        arr = np.asarray(rows, dtype=np.float64)
        class_stats[status.name.lower()] = {
            "bikes": len(rows),
            "mean_trip_count": float(arr[:, 0].mean()),
            "mean_cum_distance_km": float(arr[:, 1].mean()),
            "mean_total_time_min": float(arr[:, 2].mean()),
        }
    manifest = FleetManifest(config=cfg.to_dict(),
                             window=(t0.strftime("%Y-%m-%dT%H:%M:%SZ"),
                                     t1.strftime("%Y-%m-%dT%H:%M:%SZ")),
                             class_stats=class_stats)
    (out_dir / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True))
    return manifest
