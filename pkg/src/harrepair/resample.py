"""Sampling-rate estimation from timestamps and uniform-grid resampling."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from harrepair.ingest import Dataset, Track

DEFAULT_TARGET_HZ = 20.0

# Reference protocol: 51 subjects, 17 activities, 180 s each at 20 Hz.
PROTOCOL_SUBJECTS = 51
PROTOCOL_ACTIVITIES = 17
PROTOCOL_DURATION_S = 180.0


class TooShort(ValueError):
    pass


class DegenerateTimestamps(ValueError):
    pass


@dataclass(frozen=True)
class RateEstimate:
    raw_hz: float
    snapped_hz: float
    delta_dispersion: float  # IQR of deltas, seconds

    def __post_init__(self):
        if not self.raw_hz > 0:
            raise ValueError("raw_hz must be positive")


def rate_from_deltas(deltas_s) -> RateEstimate:
    deltas_s = np.asarray(deltas_s, dtype=np.float64)
    med = float(np.median(deltas_s))
    if med <= 0:
        raise DegenerateTimestamps("median timestamp delta is zero")
    raw = 1.0 / med
    q75, q25 = np.percentile(deltas_s, [75, 25])
    snapped = float(np.floor(raw + 0.5))
    if snapped == 0:
        # sub-1 Hz streams keep their raw rate
        snapped = raw
    return RateEstimate(raw_hz=raw, snapped_hz=snapped, delta_dispersion=float(q75 - q25))


def estimate_rate(track: Track) -> RateEstimate:
    """Rate from the median successive timestamp delta (robust to gaps)."""
    if len(track) < 3:
        raise TooShort(f"need at least 3 samples, got {len(track)}")
    deltas = np.diff(track.timestamps).astype(np.float64) * track.tick_seconds
    return rate_from_deltas(deltas)


def grid_length(span_s: float, target_hz: float) -> int:
    """floor(span * rate) + 1, tolerant of representation error in the product."""
    prod = span_s * target_hz
    return int(np.floor(prod + 1e-9 * max(1.0, abs(prod)))) + 1


def resample_track(track: Track, target_hz: float = DEFAULT_TARGET_HZ) -> Track:
    """Linearly interpolate a track onto a uniform ``target_hz`` grid.

    The grid starts at the first timestamp and covers ``[first, last]``;
    regenerated timestamps are rounded to the track's tick unit.
    """
    if not target_hz > 0:
        raise ValueError("target_hz must be positive")
    estimate_rate(track)
    t = track.seconds
    n_out = grid_length(float(t[-1]), target_hz)
    grid = np.arange(n_out, dtype=np.float64) / target_hz
    values = np.column_stack([np.interp(grid, t, track.values[:, k]) for k in range(3)])
    ticks = np.rint(grid / track.tick_seconds).astype(np.int64)
    return track.replace(values=values, timestamps=track.timestamps[0] + ticks)


@dataclass
class TotalsRow:
    device: str
    sensor: str
    samples: int
    expected: int
    n_subjects: int
    n_activities: int


def dataset_totals(
    dataset: Dataset,
    n_subjects: int | None = None,
    n_activities: int | None = None,
    duration_s: float = PROTOCOL_DURATION_S,
    rate_hz: float = DEFAULT_TARGET_HZ,
) -> list[TotalsRow]:
    """Per-stream sample totals next to subjects x activities x duration x rate.

    Subject and activity counts default to the distinct values present in
    each stream.
    """
    per_stream = defaultdict(list)
    for t in dataset:
        per_stream[(t.device, t.sensor)].append(t)
    rows = []
    for (device, sensor), tracks in sorted(per_stream.items()):
        ns = n_subjects if n_subjects is not None else len({t.subject_id for t in tracks})
        na = n_activities if n_activities is not None else len({t.activity for t in tracks})
        rows.append(
            TotalsRow(
                device=device,
                sensor=sensor,
                samples=sum(len(t) for t in tracks),
                expected=int(round(ns * na * duration_s * rate_hz)),
                n_subjects=ns,
                n_activities=na,
            )
        )
    return rows


def write_totals_csv(path, original: list[TotalsRow], resampled: list[TotalsRow] | None = None) -> None:
    """Totals table with rows device x sensor and columns original/resampled.

    Resampling uses linear interpolation without an anti-aliasing filter.
    """
    resampled_by = {(r.device, r.sensor): r for r in (resampled or [])}
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["device", "sensor", "original", "resampled", "expected", "note"])
        for r in original:
            rr = resampled_by.get((r.device, r.sensor))
            w.writerow(
                [
                    r.device,
                    r.sensor,
                    r.samples,
                    rr.samples if rr else "",
                    rr.expected if rr else r.expected,
                    "linear interpolation, no anti-aliasing filter" if rr else "",
                ]
            )
