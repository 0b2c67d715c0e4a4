"""Parse raw trip/GPS/label files, join them per bike, and split by class.

File formats (UTF-8 CSV, ISO-8601 UTC timestamps at seconds resolution):

* trips:  ``bike_id,start_time,end_time,start_lat,start_lon,end_lat,end_lon``
* gps:    ``bike_id,timestamp,lat,lon``
* labels: ``bike_id,status``  (status is 0 = normal, 1 = unusable)
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import IntEnum
from pathlib import Path

import numpy as np

TRIPS_HEADER = ["bike_id", "start_time", "end_time", "start_lat", "start_lon", "end_lat", "end_lon"]
GPS_HEADER = ["bike_id", "timestamp", "lat", "lon"]
LABELS_HEADER = ["bike_id", "status"]


class DataFormatError(ValueError):
    """A row failed validation; carries file, line number, and field."""

    def __init__(self, path, line: int, fieldname: str, message: str):
        self.path = str(path)
        self.line = line
        self.field = fieldname
        super().__init__(f"{self.path}:{line}: field '{fieldname}': {message}")


class Status(IntEnum):
    NORMAL = 0
    UNUSABLE = 1


@dataclass(frozen=True)
class GeoCoord:
    """A position in decimal degrees; range-checked on construction."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and -90.0 <= self.lat <= 90.0):
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not (math.isfinite(self.lon) and -180.0 <= self.lon <= 180.0):
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class TripRecord:
    """One rental: bike id, start/end times (UTC), and the OD coordinates."""

    bike: str
    start_time: datetime
    end_time: datetime
    start: GeoCoord
    end: GeoCoord

    @property
    def duration_s(self) -> float:
        return (self.end_time - self.start_time).total_seconds()


@dataclass(frozen=True)
class GpsPoint:
    bike: str
    timestamp: datetime
    coord: GeoCoord


@dataclass
class BikeRecord:
    """A bike's trips and trajectory over the observation window.

    ``trips`` is sorted by start time, ``trajectory`` by timestamp; the
    label is present only when the bike appeared in a labels file.
    """

    bike: str
    trips: list[TripRecord]
    trajectory: list[GpsPoint]
    label: Status | None = None


@dataclass
class SkipReport:
    """Bikes dropped during assembly because they had no in-window GPS."""

    no_gps: int = 0
    skipped_bikes: list[str] = field(default_factory=list)


# -- parsing -------------------------------------------------------------------


def _parse_timestamp(text: str) -> datetime:
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    # seconds resolution by contract; sub-second data would not round-trip
    return dt.astimezone(timezone.utc).replace(microsecond=0)


def _format_timestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _check_bike_id(value: str, path, line: int) -> str:
    if not value:
        raise DataFormatError(path, line, "bike_id", "empty bike id")
    if "," in value:
        raise DataFormatError(path, line, "bike_id", "bike id contains a comma")
    return value


def _parse_float(value: str, path, line: int, fieldname: str) -> float:
    try:
        out = float(value)
    except ValueError:
        raise DataFormatError(path, line, fieldname, f"not a number: {value!r}") from None
    if not math.isfinite(out):
        raise DataFormatError(path, line, fieldname, f"not finite: {value!r}")
    return out


def _parse_coord(lat_s: str, lon_s: str, path, line: int, prefix: str) -> GeoCoord:
    lat = _parse_float(lat_s, path, line, prefix + "lat")
    lon = _parse_float(lon_s, path, line, prefix + "lon")
    try:
        return GeoCoord(lat, lon)
    except ValueError as exc:
        fieldname = prefix + ("lat" if "latitude" in str(exc) else "lon")
        raise DataFormatError(path, line, fieldname, str(exc)) from None


def _read_rows(path, expected_header: list[str]):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(path, 1, "header", "file is empty") from None
        if header != expected_header:
            raise DataFormatError(path, 1, "header",
                                  f"expected {','.join(expected_header)!r}, got {','.join(header)!r}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise DataFormatError(path, line, "row",
                                      f"expected {len(expected_header)} columns, got {len(row)}")
            yield line, row


def parse_trips(path) -> list[TripRecord]:
    """Read a trips CSV; rows are returned in file order."""
    trips = []
    for line, row in _read_rows(path, TRIPS_HEADER):
        bike = _check_bike_id(row[0], path, line)
        try:
            start_time = _parse_timestamp(row[1])
        except ValueError:
            raise DataFormatError(path, line, "start_time", f"bad timestamp: {row[1]!r}") from None
        try:
            end_time = _parse_timestamp(row[2])
        except ValueError:
            raise DataFormatError(path, line, "end_time", f"bad timestamp: {row[2]!r}") from None
        if end_time < start_time:
            raise DataFormatError(path, line, "end_time", "end_time before start_time")
        start = _parse_coord(row[3], row[4], path, line, "start_")
        end = _parse_coord(row[5], row[6], path, line, "end_")
        trips.append(TripRecord(bike, start_time, end_time, start, end))
    return trips


def parse_gps(path) -> list[GpsPoint]:
    """Read a gps CSV; rows are returned in file order."""
    points = []
    for line, row in _read_rows(path, GPS_HEADER):
        bike = _check_bike_id(row[0], path, line)
        try:
            ts = _parse_timestamp(row[1])
        except ValueError:
            raise DataFormatError(path, line, "timestamp", f"bad timestamp: {row[1]!r}") from None
        coord = _parse_coord(row[2], row[3], path, line, "")
        points.append(GpsPoint(bike, ts, coord))
    return points


def parse_labels(path) -> list[tuple[str, Status]]:
    """Read a labels CSV; duplicate bike ids are rejected."""
    labels = []
    seen: set[str] = set()
    for line, row in _read_rows(path, LABELS_HEADER):
        bike = _check_bike_id(row[0], path, line)
        if bike in seen:
            raise DataFormatError(path, line, "bike_id", f"duplicate bike id {bike!r}")
        seen.add(bike)
        if row[1] not in ("0", "1"):
            raise DataFormatError(path, line, "status", f"status must be 0 or 1, got {row[1]!r}")
        labels.append((bike, Status(int(row[1]))))
    return labels


# -- serialization (inverse of the parsers) -------------------------------------


def write_trips(path, trips: list[TripRecord]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRIPS_HEADER)
        for t in trips:
            w.writerow([t.bike, _format_timestamp(t.start_time), _format_timestamp(t.end_time),
                        repr(float(t.start.lat)), repr(float(t.start.lon)),
                        repr(float(t.end.lat)), repr(float(t.end.lon))])


def write_gps(path, points: list[GpsPoint]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(GPS_HEADER)
        for p in points:
            w.writerow([p.bike, _format_timestamp(p.timestamp),
                        repr(float(p.coord.lat)), repr(float(p.coord.lon))])


def write_labels(path, labels: list[tuple[str, Status]]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(LABELS_HEADER)
        for bike, status in labels:
            w.writerow([bike, int(status)])


# -- assembly and splitting ------------------------------------------------------


def assemble_records(trips: list[TripRecord],
                     gps: list[GpsPoint],
                     labels: list[tuple[str, Status]],
                     window: tuple[datetime, datetime] | None = None,
                     ) -> tuple[list[BikeRecord], SkipReport]:
    """Join trips, GPS points, and labels into one record per bike.

    ``window`` is a closed interval; member rows outside it are dropped
    (a trip counts as inside only when both endpoints are).  When omitted
    it spans the min/max timestamp present in the data.  Bikes without a
    single in-window GPS point are not emitted and land in the skip report.
    Output is sorted by bike id; member lists are time-sorted.
    """
    label_map = dict(labels)
    if len(label_map) != len(labels):
        raise ValueError("duplicate bike ids in labels")

    if window is None:
        stamps = ([t.start_time for t in trips] + [t.end_time for t in trips]
                  + [p.timestamp for p in gps])
        if not stamps:
            return [], SkipReport(no_gps=len(label_map), skipped_bikes=sorted(label_map))
        window = (min(stamps), max(stamps))
    t0, t1 = window
    if t1 < t0:
        raise ValueError("window end precedes window start")

    trips_by_bike: dict[str, list[TripRecord]] = {}
    for t in trips:
        trips_by_bike.setdefault(t.bike, []).append(t)
    gps_by_bike: dict[str, list[GpsPoint]] = {}
    for p in gps:
        gps_by_bike.setdefault(p.bike, []).append(p)

    records: list[BikeRecord] = []
    report = SkipReport()
    for bike in sorted(set(trips_by_bike) | set(gps_by_bike) | set(label_map)):
        kept_trips = sorted((t for t in trips_by_bike.get(bike, ())
                             if t0 <= t.start_time and t.end_time <= t1),
                            key=lambda t: (t.start_time, t.end_time))
        kept_points = sorted((p for p in gps_by_bike.get(bike, ()) if t0 <= p.timestamp <= t1),
                             key=lambda p: p.timestamp)
        if not kept_points:
            report.no_gps += 1
            report.skipped_bikes.append(bike)
            continue
        records.append(BikeRecord(bike, kept_trips, kept_points, label_map.get(bike)))
    return records, report


def stratified_split(records: list[BikeRecord],
                     ratio: float,
                     seed: int) -> tuple[list[BikeRecord], list[BikeRecord]]:
    """Partition records per class: floor(n_c * ratio) of each class to train.

    Membership is a seeded shuffle of each class (records pre-sorted by
    bike id, so the outcome depends only on the set, not input order).
    Both output lists come back sorted by bike id.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    by_class: dict[Status, list[BikeRecord]] = {s: [] for s in Status}
    for r in records:
        if r.label is None:
            raise ValueError(f"record for bike {r.bike!r} has no label")
        by_class[r.label].append(r)
    for status, members in by_class.items():
        if not members:
            raise ValueError(f"class {status.name} has 0 records")

    train: list[BikeRecord] = []
    test: list[BikeRecord] = []
    for status, members in sorted(by_class.items()):
        members = sorted(members, key=lambda r: r.bike)
        rng = np.random.default_rng(np.random.SeedSequence([seed, int(status)]))
        order = rng.permutation(len(members))
        n_train = int(math.floor(len(members) * ratio))
        chosen = set(order[:n_train].tolist())
        train.extend(m for i, m in enumerate(members) if i in chosen)
        test.extend(m for i, m in enumerate(members) if i not in chosen)
    train.sort(key=lambda r: r.bike)
    test.sort(key=lambda r: r.bike)
    return train, test
