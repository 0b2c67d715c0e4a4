"""Five-channel spatiotemporal features and the normalized model tensor.

Channel order is fixed: lat, lon, cumulative distance (km), trip count,
total travel time (min).  Trajectories are resampled to a uniform number
of time steps by linear interpolation in time; the three per-bike scalars
are broadcast across all steps.  Standardization is per-channel z-score
with statistics fitted on the training split only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import BikeRecord, GeoCoord, GpsPoint, Status

EARTH_RADIUS_KM = 6371.0
STD_FLOOR = 1e-8
CHANNELS = ("lat", "lon", "cum_distance_km", "trip_count", "total_time_min")
UNLABELED_BYTE = 255
MAX_RESAMPLE_STEPS = 256


@dataclass(frozen=True)
class AggregateFeatures:
    """Per-bike scalars over the observation window."""

    cum_distance_km: float
    trip_count: int
    total_time_min: float


@dataclass
class NormStats:
    """Per-channel mean and standard deviation (std floored at 1e-8)."""

    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": [float(m) for m in self.mean], "std": [float(s) for s in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass
class FeatureTensor:
    """The n_bikes x t_steps x 5 model input plus ids, labels, and stats."""

    values: np.ndarray
    labels: list[Status | None]
    bike_ids: list[str]
    norm: NormStats

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def t(self) -> int:
        return self.values.shape[1]

    @property
    def d(self) -> int:
        return self.values.shape[2]

    def labels_array(self) -> np.ndarray:
        """Labels as uint8 with 255 marking unlabeled samples."""
        return np.array([UNLABELED_BYTE if s is None else int(s) for s in self.labels],
                        dtype=np.uint8)

    def fully_labeled(self) -> bool:
        return all(s is not None for s in self.labels)


def haversine_km(a: GeoCoord, b: GeoCoord) -> float:
    """Great-circle distance in km on a sphere of radius 6371 km."""
    lat1, lon1, lat2, lon2 = map(math.radians, (a.lat, a.lon, b.lat, b.lon))
    s_lat = math.sin((lat2 - lat1) / 2.0)
    s_lon = math.sin((lon2 - lon1) / 2.0)
    h = s_lat * s_lat + math.cos(lat1) * math.cos(lat2) * s_lon * s_lon
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def resample_trajectory(points: list[GpsPoint], t_steps: int) -> np.ndarray:
    """Interpolate (lat, lon) at t_steps evenly spaced times over the span.

    A single point (or zero time span) broadcasts to every step; t_steps=1
    returns the first point.  Returns a float64 array of shape (t_steps, 2).
    """
    if not points:
        raise ValueError("cannot resample an empty trajectory")
    if t_steps < 1:
        raise ValueError(f"t_steps must be >= 1, got {t_steps}")
    lats = np.array([p.coord.lat for p in points], dtype=np.float64)
    lons = np.array([p.coord.lon for p in points], dtype=np.float64)
    if len(points) == 1 or t_steps == 1:
        return np.tile([lats[0], lons[0]], (t_steps, 1))
    times = np.array([p.timestamp.timestamp() for p in points], dtype=np.float64)
    if times[-1] == times[0]:
        return np.tile([lats[0], lons[0]], (t_steps, 1))
    targets = times[0] + (times[-1] - times[0]) * np.arange(t_steps) / (t_steps - 1)
    return np.column_stack([np.interp(targets, times, lats), np.interp(targets, times, lons)])


def compute_aggregates(record: BikeRecord) -> AggregateFeatures:
    """Arc length of the GPS track, trip count, and total riding minutes."""
    dist = 0.0
    for prev, cur in zip(record.trajectory, record.trajectory[1:]):
        dist += haversine_km(prev.coord, cur.coord)
    total_min = sum(t.duration_s for t in record.trips) / 60.0
    return AggregateFeatures(dist, len(record.trips), total_min)


def raw_feature_rows(records: list[BikeRecord], t_steps: int) -> np.ndarray:
    """Unstandardized (n, t_steps, 5) float64 feature array, record order."""
    if t_steps < 1:
        raise ValueError(f"t_steps must be >= 1, got {t_steps}")
    out = np.empty((len(records), t_steps, len(CHANNELS)), dtype=np.float64)
    for i, rec in enumerate(records):
        out[i, :, :2] = resample_trajectory(rec.trajectory, t_steps)
        agg = compute_aggregates(rec)
        out[i, :, 2] = agg.cum_distance_km
        out[i, :, 3] = agg.trip_count
        out[i, :, 4] = agg.total_time_min
    return out


def fit_normalizer(values: np.ndarray) -> NormStats:
    """Per-channel mean/std over every (sample, step) cell; population std."""
    if values.size == 0:
        raise ValueError("cannot fit a normalizer on an empty array")
    flat = values.reshape(-1, values.shape[-1]).astype(np.float64)
    mean = flat.mean(axis=0)
    std = np.maximum(flat.std(axis=0), STD_FLOOR)
    return NormStats(mean, std)


def observed_max_steps(records: list[BikeRecord], cap: int = MAX_RESAMPLE_STEPS) -> int:
    """Longest trajectory in the set, capped; a t_steps choice helper."""
    longest = max((len(r.trajectory) for r in records), default=1)
    return max(1, min(longest, cap))


def build_dataset(records: list[BikeRecord],
                  norm: NormStats | str = "fit",
                  t_steps: int = 64) -> FeatureTensor:
    """Resample, aggregate, and standardize records into a FeatureTensor.

    Pass ``norm="fit"`` to fit statistics on these records (training), or a
    NormStats from the training split to apply frozen statistics (test).
    The input NormStats is never mutated.  Values come out float32.
    """
    if t_steps < 1:
        raise ValueError(f"t_steps must be >= 1, got {t_steps}")
    raw = raw_feature_rows(records, t_steps)
    if isinstance(norm, str):
        if norm != "fit":
            raise ValueError(f"norm must be NormStats or 'fit', got {norm!r}")
        stats = fit_normalizer(raw) if records else NormStats(np.zeros(5), np.ones(5))
    else:
        stats = NormStats(norm.mean.copy(), norm.std.copy())
    values = ((raw - stats.mean) / stats.std).astype(np.float32)
    if values.size and not np.isfinite(values).all():
        raise ValueError("standardized features contain NaN or Inf")
    return FeatureTensor(values=values,
                         labels=[r.label for r in records],
                         bike_ids=[r.bike for r in records],
                         norm=stats)


# -- persistence -----------------------------------------------------------------
#
# A tensor directory holds meta.json, data.bin (little-endian float32,
# row-major [n][t][d]) and labels.bin (one byte per sample, 0/1/255).


def save_feature_tensor(tensor: FeatureTensor, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "n": tensor.n,
        "t": tensor.t,
        "d": tensor.d,
        "channels": list(CHANNELS),
        "norm": tensor.norm.to_dict(),
        "bike_ids": tensor.bike_ids,
        "has_labels": tensor.fully_labeled(),
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    (directory / "data.bin").write_bytes(np.ascontiguousarray(tensor.values, dtype="<f4").tobytes())
    (directory / "labels.bin").write_bytes(tensor.labels_array().tobytes())


def load_feature_tensor(directory) -> FeatureTensor:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    n, t, d = meta["n"], meta["t"], meta["d"]
    data = np.frombuffer((directory / "data.bin").read_bytes(), dtype="<f4")
    if data.size != n * t * d:
        raise ValueError(f"data.bin holds {data.size} floats, expected {n * t * d}")
    raw_labels = np.frombuffer((directory / "labels.bin").read_bytes(), dtype=np.uint8)
    if raw_labels.size != n:
        raise ValueError(f"labels.bin holds {raw_labels.size} bytes, expected {n}")
    labels: list[Status | None] = [None if b == UNLABELED_BYTE else Status(int(b))
                                   for b in raw_labels]
    return FeatureTensor(values=data.reshape(n, t, d).astype(np.float32),
                         labels=labels,
                         bike_ids=list(meta["bike_ids"]),
                         norm=NormStats.from_dict(meta["norm"]))
