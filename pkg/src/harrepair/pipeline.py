"""Dataset-level composition of resampling and orientation repair."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from harrepair.ingest import Dataset
from harrepair.orientation import repair_track
from harrepair.resample import DEFAULT_TARGET_HZ, estimate_rate, resample_track

logger = logging.getLogger(__name__)


@dataclass
class RepairOutcome:
    dataset: Dataset
    logs: dict = field(default_factory=dict)
    rates: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)


def repair_dataset(
    dataset: Dataset,
    target_hz: float = DEFAULT_TARGET_HZ,
    window_seconds: float = 10.0,
    resample: bool = True,
    orient: bool = True,
    orient_sensors=("accel",),
) -> RepairOutcome:
    """Resample every track to ``target_hz`` and repair accelerometer orientation.

    The two repairs are independent, so resampling goes first only to give
    the orientation windows a known constant rate. A failing track is logged
    and left out; the rest of the dataset is still processed.
    """
    out = RepairOutcome(dataset=dataset)
    tracks = []
    for t in dataset:
        try:
            est = estimate_rate(t)
            out.rates[t.key] = est
            if resample:
                t = resample_track(t, target_hz)
                rate = target_hz
            else:
                rate = est.snapped_hz
            if orient and t.sensor in orient_sensors:
                t, log = repair_track(t, window_seconds, rate)
                out.logs[t.key] = log
            tracks.append(t)
        except ValueError as exc:
            logger.error("track %s failed: %s", t.key, exc)
            out.failures.append((t.key, str(exc)))
    out.dataset = Dataset.from_tracks(tracks, provenance=dataset.provenance, units=dataset.units)
    return out
