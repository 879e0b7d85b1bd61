"""Smartphone axis-orientation detection and repair.

The canonical placement (case 1, facing out) has gravity along +Y. The other
placements put gravity on -Y (case 3), +X (case 2) or -X (case 4); a phone
facing the body additionally inverts Z.

Repair never multiplies samples by -1. An axis whose mean is negative is
lifted by twice its absolute mean, which keeps the oscillation pattern and
gives the axis the same absolute mean but positive; afterwards X and Y are
exchanged when X carries the larger mean.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from harrepair.ingest import Track

logger = logging.getLogger(__name__)

GRAVITY = 9.81
SIGNIFICANCE = 0.25 * GRAVITY
FACING_THRESHOLD = 0.1 * GRAVITY
# Means this close to zero count as non-negative; keeps a second pass a no-op
# despite rounding in the shifted means.
ZERO_TOL = 1e-12

AXES = "xyz"


class IndeterminateOrientation(ValueError):
    pass


class EmptyTrack(ValueError):
    pass


@dataclass(frozen=True)
class OrientationCase:
    label: int
    z_facing: str = "out"
    gravity_axis: str = field(default="y", compare=False)

    def __post_init__(self):
        if self.label not in (1, 2, 3, 4) or self.z_facing not in ("out", "in"):
            raise ValueError(f"invalid orientation case {self.label}/{self.z_facing}")

    def __str__(self) -> str:
        return f"Case{self.label}/{self.z_facing}"

    @classmethod
    def parse(cls, text: str) -> "OrientationCase":
        label, _, facing = text.partition("/")
        return cls(int(label.removeprefix("Case")), facing or "out")


CANONICAL = OrientationCase(1, "out")
ALL_CASES = tuple(OrientationCase(label, facing) for facing in ("out", "in") for label in (1, 2, 3, 4))


@dataclass(frozen=True)
class Shift:
    axis: int
    amount: float

    def __str__(self) -> str:
        return f"shift {AXES[self.axis]} {self.amount!r}"


@dataclass(frozen=True)
class Swap:
    def __str__(self) -> str:
        return "swap xy"


SWAP = Swap()


def parse_transform(text: str):
    parts = text.split()
    if parts == ["swap", "xy"]:
        return SWAP
    if len(parts) == 3 and parts[0] == "shift":
        return Shift(AXES.index(parts[1]), float(parts[2]))
    raise ValueError(f"unknown transform {text!r}")


def axis_means(window: np.ndarray) -> np.ndarray:
    return np.asarray(window, dtype=np.float64).mean(axis=0)


def detect_case(window, threshold: float = SIGNIFICANCE, facing_threshold: float = FACING_THRESHOLD) -> OrientationCase:
    """Classify a window's placement from its signed per-axis means.

    The gravity axis is the one with the largest absolute mean. Among X and
    Y, the larger absolute mean picks case 2/4 (X) or 1/3 (Y), its sign picks
    which. Z is reported as facing in when its mean is clearly negative.

    Raises:
        IndeterminateOrientation: no axis mean reaches ``threshold``.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[0] == 0:
        raise ValueError("window must be a nonempty (n, 3) array")
    m = axis_means(window)
    a = np.abs(m)
    if a.max() < threshold:
        raise IndeterminateOrientation(f"no dominant axis, means {m.round(3).tolist()}")
    gravity_axis = AXES[int(np.argmax(a))]
    if a[0] > a[1]:
        label = 2 if m[0] > 0 else 4
    else:
        label = 1 if m[1] >= 0 else 3
    facing = "in" if m[2] < -facing_threshold else "out"
    return OrientationCase(label, facing, gravity_axis)


def apply_transforms(window: np.ndarray, transforms) -> np.ndarray:
    out = np.array(window, dtype=np.float64, copy=True)
    for t in transforms:
        if isinstance(t, Shift):
            out[:, t.axis] += t.amount
        elif isinstance(t, Swap):
            out[:, [0, 1]] = out[:, [1, 0]]
        else:
            raise TypeError(f"unknown transform {t!r}")
    return out


def is_canonical(window: np.ndarray) -> bool:
    """True when every axis mean is non-negative and mean(Y) >= mean(X)."""
    m = axis_means(window)
    return bool(np.all(m >= -ZERO_TOL) and not m[0] > m[1])


def plan_transforms(window: np.ndarray) -> tuple:
    """Transforms that bring ``window`` to the canonical orientation."""
    window = np.asarray(window, dtype=np.float64)
    m = axis_means(window)
    shifts = tuple(Shift(k, 2.0 * abs(float(m[k]))) for k in range(3) if m[k] < -ZERO_TOL)
    shifted = apply_transforms(window, shifts) if shifts else window
    post = axis_means(shifted)
    return shifts + (SWAP,) if post[0] > post[1] else shifts


def repair_window(window):
    """Return ``(repaired, transforms)`` for one nonempty window."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[0] == 0:
        raise ValueError("window must be a nonempty (n, 3) array")
    transforms = plan_transforms(window)
    return apply_transforms(window, transforms), transforms


def _kind(transforms) -> tuple:
    return tuple(sorted(t.axis for t in transforms if isinstance(t, Shift))), any(isinstance(t, Swap) for t in transforms)


def _realize(kind, window: np.ndarray) -> tuple:
    axes, swap = kind
    m = axis_means(window)
    shifts = tuple(Shift(k, 2.0 * abs(float(m[k]))) for k in axes)
    return shifts + (SWAP,) if swap else shifts


@dataclass(frozen=True)
class WindowRecord:
    index: int
    start: int
    end: int
    means_before: tuple
    means_after: tuple
    case: OrientationCase | None
    transforms: tuple
    held: bool = False
    swap_by_abs: bool = False

    def as_row(self) -> dict:
        row = {"window": self.index, "start": self.start, "end": self.end}
        for name, vals in (("before", self.means_before), ("after", self.means_after)):
            for ax, v in zip(AXES, vals):
                row[f"mean_{ax}_{name}"] = repr(float(v))
        row["case"] = str(self.case) if self.case else "indeterminate"
        row["gravity_axis"] = self.case.gravity_axis if self.case else ""
        row["transforms"] = ";".join(str(t) for t in self.transforms)
        row["held"] = int(self.held)
        row["swap_by_abs"] = int(self.swap_by_abs)
        return row


@dataclass
class RepairLog:
    """Per-window audit trail of one track's repair."""

    key: tuple = ()
    window_samples: int = 0
    rate_hz: float = 0.0
    windows: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.windows)

    @property
    def cases(self) -> list:
        return [w.case for w in self.windows]

    @property
    def n_transforms(self) -> int:
        return sum(len(w.transforms) for w in self.windows)

    def case_changes(self) -> int:
        seen = [c for c in self.cases if c is not None]
        return sum(a != b for a, b in zip(seen, seen[1:]))

    def rows(self) -> list[dict]:
        return [w.as_row() for w in self.windows]

    def write_csv(self, path, append: bool = False) -> None:
        rows = self.rows()
        if not rows:
            return
        key_cols = dict(zip(("subject", "activity", "device", "sensor"), self.key))
        path = Path(path)
        new = not (append and path.exists())
        with path.open("a" if append else "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(key_cols) + list(rows[0]))
            if new:
                writer.writeheader()
            for r in rows:
                writer.writerow({**key_cols, **r})


def _holdable(kind, own_kind, window: np.ndarray, hold_band: float) -> bool:
    """Can the previous window's transform set stand in for this window's own?

    Only when the result still meets the canonical property and the sole
    disagreement is about axes hovering near zero.
    """
    m = axis_means(window)
    extra = set(kind[0]) - set(own_kind[0])
    if any(abs(m[k]) >= hold_band for k in extra):
        return False
    return is_canonical(apply_transforms(window, _realize(kind, window)))


def repair_values(values: np.ndarray, window_samples: int, hold_band: float = FACING_THRESHOLD, key=(), rate_hz=0.0):
    """Repair an ``(n, 3)`` array window by window; see :func:`repair_track`."""
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if n == 0:
        raise EmptyTrack(f"empty track {key}")
    if window_samples < 1:
        raise ValueError("window_samples must be >= 1")
    bounds = [(s, min(s + window_samples, n)) for s in range(0, n, window_samples)]
    plans = [plan_transforms(values[s:e]) for s, e in bounds]
    kinds = [_kind(p) for p in plans]

    out = np.empty_like(values)
    log = RepairLog(key=tuple(key), window_samples=window_samples, rate_hz=rate_hz)
    held = kinds[0]
    for i, (s, e) in enumerate(bounds):
        win = values[s:e]
        own = kinds[i]
        if own != held:
            confirmed = i == len(bounds) - 1 or kinds[i + 1] == own
            if confirmed or not _holdable(held, own, win, hold_band):
                held = own
        transforms = plans[i] if held == own else _realize(held, win)
        repaired = apply_transforms(win, transforms)
        out[s:e] = repaired
        try:
            case = detect_case(win)
        except IndeterminateOrientation as exc:
            logger.debug("window %d of %s: %s", i, key, exc)
            case = None
        before = axis_means(win)
        log.windows.append(
            WindowRecord(
                index=i,
                start=s,
                end=e,
                means_before=tuple(before.tolist()),
                means_after=tuple(axis_means(repaired).tolist()),
                case=case,
                transforms=transforms,
                held=held != own,
                swap_by_abs=bool(abs(before[0]) > abs(before[1])),
            )
        )
    return out, log


def repair_track(track: Track, window_seconds: float = 10.0, rate: float | None = None, hold_band: float = FACING_THRESHOLD):
    """Bring a track to the canonical orientation, window by window.

    The track is cut into consecutive ``window_seconds`` windows (the last one
    may be shorter) and each window gets its own shift/swap transforms. When a
    window's transforms differ from its predecessor's, the change is taken
    only if the next window agrees or the track ends there; otherwise the
    previous set is kept, provided it still yields a canonical window and the
    disagreement concerns near-zero axes only.

    Args:
        track: input track, ideally already on a uniform grid.
        window_seconds: repair window length.
        rate: sampling rate in Hz; estimated from timestamps when omitted.
        hold_band: largest absolute axis mean for which a held shift is allowed.

    Returns:
        ``(repaired_track, RepairLog)``
    """
    if len(track) == 0:
        raise EmptyTrack(f"empty track {track.key}")
    if rate is None:
        from harrepair.resample import estimate_rate

        rate = estimate_rate(track).snapped_hz
    window_samples = max(1, int(round(window_seconds * rate)))
    values, log = repair_values(track.values, window_samples, hold_band, key=track.key, rate_hz=rate)
    return track.replace(values=values), log
