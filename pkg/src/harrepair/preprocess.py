"""Windowing of repaired tracks and subject-disjoint splits."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from harrepair.ingest import Dataset, Track

logger = logging.getLogger(__name__)

CLASS_CODES = ("A", "B", "C", "D", "E")
CLASS_NAMES = ("Walking", "Jogging", "Stairs", "Sitting", "Standing")
CLASS_INDEX = {c: i for i, c in enumerate(CLASS_CODES)}

WINDOWSET_VERSION = 1


class NotEnoughSubjects(ValueError):
    pass


class TooFewSubjects(ValueError):
    pass


def window_count(n: int, length: int, stride: int) -> int:
    return (n - length) // stride + 1 if n >= length else 0


def contiguous_runs(track: Track, gap_factor: float = 1.5) -> list[tuple[int, int]]:
    """Index ranges ``[start, end)`` split wherever a delta exceeds ``gap_factor`` x the median delta."""
    n = len(track)
    if n < 3:
        return [(0, n)]
    d = np.diff(track.timestamps)
    cut = np.flatnonzero(d > gap_factor * np.median(d)) + 1
    edges = [0, *cut.tolist(), n]
    return list(zip(edges[:-1], edges[1:]))


def window_starts(track: Track, trim_seconds=15.0, window_seconds=5.0, stride_seconds=1.0, rate=20.0, gap_factor=1.5) -> list[int]:
    """Start offsets (in samples of the source track) of every window."""
    trim = int(round(trim_seconds * rate))
    length = int(round(window_seconds * rate))
    stride = int(round(stride_seconds * rate))
    if length < 1 or stride < 1:
        raise ValueError("window and stride must be at least one sample")
    starts = []
    for s, e in contiguous_runs(track, gap_factor):
        s = max(s, trim)
        if e - s >= length:
            starts.extend(range(s, s + window_count(e - s, length, stride) * stride, stride))
    return starts


@dataclass(frozen=True)
class Window:
    values: np.ndarray  # (3, L)
    label: int
    subject_id: int
    device: str
    offset: int


def trim_and_window(track: Track, trim_seconds=15.0, window_seconds=5.0, stride_seconds=1.0, rate=20.0) -> list[Window]:
    """Drop the first ``trim_seconds`` and cut fixed-length strided windows.

    Windows never cross the trim point or a recording gap. The track must
    carry one of the five classification activities.
    """
    if track.activity not in CLASS_INDEX:
        raise ValueError(f"activity {track.activity} is not a classification class")
    length = int(round(window_seconds * rate))
    starts = window_starts(track, trim_seconds, window_seconds, stride_seconds, rate)
    if not starts:
        logger.info("track %s too short for a %d-sample window", track.key, length)
    label = CLASS_INDEX[track.activity]
    return [
        Window(np.ascontiguousarray(track.values[s : s + length].T), label, track.subject_id, track.device, s)
        for s in starts
    ]


@dataclass(frozen=True, eq=False)
class WindowSet:
    """Labelled windows stored as arrays; ``values`` is ``(N, 3, L)``."""

    values: np.ndarray
    labels: np.ndarray
    subjects: np.ndarray
    devices: np.ndarray
    offsets: np.ndarray
    class_names: tuple = CLASS_NAMES

    def __post_init__(self):
        n = len(self.values)
        if self.values.ndim != 3 or self.values.shape[1] != 3:
            raise ValueError(f"values must be (N, 3, L), got {self.values.shape}")
        for name in ("labels", "subjects", "devices", "offsets"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length differs from values")
        if n and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ValueError("label outside the class map")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def window_length(self) -> int:
        return self.values.shape[2]

    @classmethod
    def from_windows(cls, windows: Iterable[Window], length: int = 100, class_names=CLASS_NAMES) -> "WindowSet":
        windows = list(windows)
        if windows:
            values = np.stack([w.values for w in windows]).astype(np.float32)
        else:
            values = np.zeros((0, 3, length), dtype=np.float32)
        return cls(
            values=values,
            labels=np.array([w.label for w in windows], dtype=np.int64),
            subjects=np.array([w.subject_id for w in windows], dtype=np.int64),
            devices=np.array([w.device for w in windows], dtype=str),
            offsets=np.array([w.offset for w in windows], dtype=np.int64),
            class_names=tuple(class_names),
        )

    def take(self, idx) -> "WindowSet":
        idx = np.asarray(idx)
        return WindowSet(
            self.values[idx], self.labels[idx], self.subjects[idx], self.devices[idx], self.offsets[idx], self.class_names
        )

    def for_subjects(self, subjects) -> "WindowSet":
        return self.take(np.flatnonzero(np.isin(self.subjects, list(subjects))))

    def subject_ids(self) -> list[int]:
        return sorted(set(self.subjects.tolist()))

    def save(self, path) -> None:
        header = {"version": WINDOWSET_VERSION, "length": self.window_length, "class_names": list(self.class_names)}
        with open(path, "wb") as fh:
            np.savez(
                fh,
                header=np.array(json.dumps(header)),
                values=self.values,
                labels=self.labels,
                subjects=self.subjects,
                devices=self.devices,
                offsets=self.offsets,
            )

    @classmethod
    def load(cls, path) -> "WindowSet":
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            if header.get("version") != WINDOWSET_VERSION:
                raise ValueError(f"{path}: unsupported window set version {header.get('version')}")
            return cls(
                values=z["values"],
                labels=z["labels"],
                subjects=z["subjects"],
                devices=z["devices"],
                offsets=z["offsets"],
                class_names=tuple(header["class_names"]),
            )


def build_windowset(dataset: Dataset, device: str, sensor: str = "accel", trim_seconds=15.0, window_seconds=5.0, stride_seconds=1.0, rate=20.0) -> WindowSet:
    """Windows for every classification-activity track of one stream."""
    windows = []
    for t in dataset.select(device=device, sensor=sensor, activities=CLASS_CODES):
        windows.extend(trim_and_window(t, trim_seconds, window_seconds, stride_seconds, rate))
    return WindowSet.from_windows(windows, length=int(round(window_seconds * rate)))


@dataclass(frozen=True)
class SplitPlan:
    train: frozenset
    validation: frozenset
    test: frozenset
    seed: int | None = None

    def __post_init__(self):
        if self.train & self.validation or self.train & self.test or self.validation & self.test:
            raise ValueError("split parts overlap")


def make_split(subjects, sizes=(41, 5, 5), seed: int = 0) -> SplitPlan:
    """Random subject-disjoint train/validation/test assignment."""
    subjects = sorted(set(subjects))
    if sum(sizes) > len(subjects):
        raise NotEnoughSubjects(f"sizes {sizes} need {sum(sizes)} subjects, have {len(subjects)}")
    perm = np.random.default_rng(seed).permutation(len(subjects))
    chosen = [subjects[i] for i in perm]
    a, b, c = sizes
    return SplitPlan(frozenset(chosen[:a]), frozenset(chosen[a : a + b]), frozenset(chosen[a + b : a + b + c]), seed)


def leave_one_out(subjects) -> Iterator[SplitPlan]:
    """One plan per subject: that subject is the test set, the rest train."""
    subjects = sorted(set(subjects))
    if len(subjects) < 2:
        raise TooFewSubjects("leave-one-out needs at least 2 subjects")
    return (SplitPlan(frozenset(x for x in subjects if x != s), frozenset(), frozenset([s])) for s in subjects)
