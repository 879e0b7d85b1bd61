"""Raw sensor log parsing and writing.

Lines follow the public WISDM raw layout::

    <subject>,<activity>,<timestamp>,<x>,<y>,<z>;

The device and sensor are not part of the line; they are taken from the file
name (``data_1600_accel_phone.txt``), from the directory layout
(``raw/phone/accel/...``) or from explicit arguments.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

logger = logging.getLogger(__name__)

# WISDM codes A..S without N.
ACTIVITIES = tuple(c for c in "ABCDEFGHIJKLMNOPQRS" if c != "N")
DEVICES = ("phone", "watch")
SENSORS = ("accel", "gyro")

NANOSECONDS = "ns"
MILLISECONDS = "ms"
TICK_SECONDS = {NANOSECONDS: 1e-9, MILLISECONDS: 1e-3}
NS_THRESHOLD = 10**14

_FILENAME_RE = re.compile(r"data_(\d+)_(accel|gyro)_(phone|watch)")

TrackKey = tuple[int, str, str, str]


class IngestError(ValueError):
    """Base class for raw-file problems."""


class MalformedLine(IngestError):
    pass


class IllegalActivity(IngestError):
    pass


class LoadError(IngestError):
    """Raised in strict mode, or when a file cannot be attributed to a device/sensor."""


@dataclass(frozen=True)
class Sample:
    subject_id: int
    activity: str
    timestamp: int
    x: float
    y: float
    z: float


@dataclass(frozen=True, eq=False)
class Track:
    """One (subject, activity, device, sensor) triaxial recording.

    ``timestamps`` are integer ticks, ``values`` is an ``(n, 3)`` float array
    holding the x, y, z columns. Both arrays are made read-only.
    """

    subject_id: int
    activity: str
    device: str
    sensor: str
    timestamps: np.ndarray
    values: np.ndarray
    tick_seconds: float = TICK_SECONDS[NANOSECONDS]

    def __post_init__(self):
        ts = np.array(self.timestamps, dtype=np.int64)
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[1] != 3:
            raise ValueError(f"values must have shape (n, 3), got {vals.shape}")
        if ts.shape != (vals.shape[0],):
            raise ValueError("timestamps and values disagree in length")
        if len(ts) == 0:
            raise ValueError(f"empty track {self.key}")
        if len(ts) > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError(f"timestamps not strictly increasing in {self.key}")
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"non-finite sample values in {self.key}")
        if self.activity not in ACTIVITIES:
            raise IllegalActivity(self.activity)
        ts.flags.writeable = False
        vals.flags.writeable = False
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "values", vals)

    @property
    def key(self) -> TrackKey:
        return (self.subject_id, self.activity, self.device, self.sensor)

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def seconds(self) -> np.ndarray:
        """Sample times in seconds relative to the first sample."""
        return (self.timestamps - self.timestamps[0]).astype(np.float64) * self.tick_seconds

    @property
    def span_seconds(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0]) * self.tick_seconds

    def replace(self, values=None, timestamps=None, **kwargs) -> "Track":
        return Track(
            subject_id=kwargs.get("subject_id", self.subject_id),
            activity=kwargs.get("activity", self.activity),
            device=kwargs.get("device", self.device),
            sensor=kwargs.get("sensor", self.sensor),
            timestamps=self.timestamps if timestamps is None else timestamps,
            values=self.values if values is None else values,
            tick_seconds=kwargs.get("tick_seconds", self.tick_seconds),
        )

    def same_content(self, other: "Track", atol: float = 0.0) -> bool:
        return (
            self.key == other.key
            and np.array_equal(self.timestamps, other.timestamps)
            and np.allclose(self.values, other.values, rtol=0.0, atol=atol)
        )


@dataclass(frozen=True)
class Dataset:
    """Tracks keyed by (subject, activity, device, sensor)."""

    tracks: Mapping[TrackKey, Track] = field(default_factory=dict)
    provenance: tuple[str, ...] = ()
    units: Mapping[str, str] = field(default_factory=dict)

    @classmethod
    def from_tracks(cls, tracks: Iterable[Track], provenance=(), units=None) -> "Dataset":
        out: dict[TrackKey, Track] = {}
        for t in tracks:
            if t.key in out:
                raise ValueError(f"duplicate track {t.key}")
            out[t.key] = t
        return cls(dict(sorted(out.items())), tuple(provenance), dict(units or {}))

    def __len__(self) -> int:
        return len(self.tracks)

    def __iter__(self) -> Iterator[Track]:
        return iter(self.tracks.values())

    def __getitem__(self, key: TrackKey) -> Track:
        return self.tracks[key]

    def __contains__(self, key) -> bool:
        return key in self.tracks

    def subjects(self) -> list[int]:
        return sorted({k[0] for k in self.tracks})

    def activities(self) -> list[str]:
        return sorted({k[1] for k in self.tracks})

    def streams(self) -> list[tuple[str, str]]:
        """Distinct (device, sensor) pairs present."""
        return sorted({(k[2], k[3]) for k in self.tracks})

    def select(self, device=None, sensor=None, activities=None, subjects=None) -> "Dataset":
        def keep(k):
            return (
                (device is None or k[2] == device)
                and (sensor is None or k[3] == sensor)
                and (activities is None or k[1] in activities)
                and (subjects is None or k[0] in subjects)
            )

        return Dataset({k: t for k, t in self.tracks.items() if keep(k)}, self.provenance, self.units)

    def missing_pairs(self, device, sensor, subjects=None, activities=None) -> list[tuple[int, str]]:
        """(subject, activity) pairs with no track for the given stream.

        By default the grid is every subject present in any stream crossed
        with every activity present in any stream.
        """
        subjects = self.subjects() if subjects is None else sorted(subjects)
        activities = self.activities() if activities is None else sorted(activities)
        return [
            (s, a)
            for s in subjects
            for a in activities
            if (s, a, device, sensor) not in self.tracks
        ]


@dataclass
class IngestReport:
    lines_read: int = 0
    lines_parsed: int = 0
    lines_skipped: int = 0
    duplicates_dropped: int = 0
    per_key: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    units: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lines_read": self.lines_read,
            "lines_parsed": self.lines_parsed,
            "lines_skipped": self.lines_skipped,
            "duplicates_dropped": self.duplicates_dropped,
            "units": dict(self.units),
            "per_key": {"{},{},{},{}".format(*k): n for k, n in sorted(self.per_key.items())},
            "errors": list(self.errors),
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def parse_line(line: str) -> Sample:
    """Parse one ``subject,activity,timestamp,x,y,z;`` line."""
    s = line.strip()
    if s.endswith(";"):
        s = s[:-1]
    parts = [p.strip() for p in s.split(",")]
    if len(parts) != 6:
        raise MalformedLine(f"expected 6 fields, got {len(parts)}: {line.strip()!r}")
    subject, activity, ts, x, y, z = parts
    try:
        subject_id = int(subject)
        timestamp = int(ts)
        xyz = [float(x), float(y), float(z)]
    except ValueError as exc:
        raise MalformedLine(f"non-numeric field in {line.strip()!r}") from exc
    if subject_id <= 0:
        raise MalformedLine(f"subject id must be positive: {subject_id}")
    if not all(math.isfinite(v) for v in xyz):
        raise MalformedLine(f"non-finite value in {line.strip()!r}")
    if activity not in ACTIVITIES:
        raise IllegalActivity(f"illegal activity code {activity!r}")
    return Sample(subject_id, activity, timestamp, *xyz)


def detect_unit(timestamps) -> str:
    """Nanoseconds if the typical magnitude is at least 1e14, else milliseconds."""
    if len(timestamps) == 0:
        return NANOSECONDS
    return NANOSECONDS if abs(float(np.median(timestamps))) >= NS_THRESHOLD else MILLISECONDS


def infer_stream(path, device=None, sensor=None) -> tuple[str, str]:
    """Work out (device, sensor) for a raw file; explicit arguments win."""
    path = Path(path)
    m = _FILENAME_RE.search(path.name)
    if m:
        device = device or m.group(3)
        sensor = sensor or m.group(2)
    for part in reversed(path.parts[:-1]):
        if device is None and part in DEVICES:
            device = part
        if sensor is None and part in SENSORS:
            sensor = part
    if device is None or sensor is None:
        raise LoadError(f"{path}: cannot infer device/sensor; pass them explicitly")
    if device not in DEVICES or sensor not in SENSORS:
        raise LoadError(f"{path}: unknown stream {device}/{sensor}")
    return device, sensor


def load_dataset(paths, policy: str = "skip_and_count", device=None, sensor=None):
    """Load raw files into a :class:`Dataset`.

    Args:
        paths: file paths (a single path is accepted).
        policy: ``"skip_and_count"`` drops bad lines and counts them;
            ``"strict"`` raises :class:`LoadError` naming file and line.
        device, sensor: override the stream inferred from each path.

    Returns:
        ``(dataset, report)``
    """
    if policy not in ("strict", "skip_and_count"):
        raise ValueError(f"unknown policy {policy!r}")
    if isinstance(paths, (str, Path)):
        paths = [paths]
    report = IngestReport()
    grouped: dict[TrackKey, list] = defaultdict(list)
    key_units: dict[TrackKey, str] = {}

    for path in paths:
        path = Path(path)
        dev, sen = infer_stream(path, device, sensor)
        rows = []
        with path.open() as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                report.lines_read += 1
                try:
                    rows.append(parse_line(line))
                except IngestError as exc:
                    if policy == "strict":
                        raise LoadError(f"{path}:{lineno}: {exc}") from exc
                    report.lines_skipped += 1
                    report.errors.append(f"{path}:{lineno}: {exc}")
                    continue
                report.lines_parsed += 1
        unit = detect_unit([r.timestamp for r in rows])
        report.units[str(path)] = unit
        for r in rows:
            key = (r.subject_id, r.activity, dev, sen)
            if key_units.setdefault(key, unit) != unit:
                raise LoadError(f"{path}: timestamp unit {unit} conflicts with earlier files for {key}")
            grouped[key].append((r.timestamp, r.x, r.y, r.z))

    tracks = []
    for key, rows in grouped.items():
        arr = np.array(rows, dtype=np.float64)
        ts = np.array([r[0] for r in rows], dtype=np.int64)
        order = np.argsort(ts, kind="stable")
        ts, arr = ts[order], arr[order]
        keep = np.ones(len(ts), dtype=bool)
        keep[1:] = ts[1:] != ts[:-1]
        dropped = int((~keep).sum())
        if dropped:
            logger.info("dropped %d duplicate timestamps in %s", dropped, key)
        report.duplicates_dropped += dropped
        t = Track(*key, timestamps=ts[keep], values=arr[keep, 1:], tick_seconds=TICK_SECONDS[key_units[key]])
        report.per_key[key] = len(t)
        tracks.append(t)

    dataset = Dataset.from_tracks(tracks, provenance=[str(p) for p in paths], units=report.units)
    return dataset, report


def format_line(subject_id, activity, timestamp, x, y, z) -> str:
    return f"{subject_id},{activity},{int(timestamp)},{x:.6f},{y:.6f},{z:.6f};\n"


def _track_lines(track: Track) -> Iterator[str]:
    for ts, (x, y, z) in zip(track.timestamps.tolist(), track.values.tolist()):
        yield format_line(track.subject_id, track.activity, ts, x, y, z)


def write_dataset(dataset: Dataset, path) -> Path:
    """Write every track to one raw file.

    A raw line carries no device or sensor, so all tracks must share one
    (device, sensor) stream; use :func:`write_dataset_tree` otherwise.
    """
    streams = dataset.streams()
    if len(streams) > 1:
        raise ValueError(f"one file cannot hold several streams {streams}; use write_dataset_tree")
    path = Path(path)
    with path.open("w") as fh:
        for track in dataset:
            fh.writelines(_track_lines(track))
    return path


def write_dataset_tree(dataset: Dataset, root) -> list[Path]:
    """Write ``root/<device>/<sensor>/data_<subject>_<sensor>_<device>.txt`` files."""
    root = Path(root)
    by_file: dict[Path, list[Track]] = defaultdict(list)
    for t in dataset:
        by_file[root / t.device / t.sensor / f"data_{t.subject_id}_{t.sensor}_{t.device}.txt"].append(t)
    for path, tracks in by_file.items():
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for t in tracks:
                fh.writelines(_track_lines(t))
    return sorted(by_file)


def find_raw_files(root) -> list[Path]:
    """Raw ``*.txt`` files below ``root`` (or ``root`` itself if it is a file)."""
    root = Path(root)
    if root.is_file():
        return [root]
    return sorted(p for p in root.rglob("*.txt") if p.is_file())
