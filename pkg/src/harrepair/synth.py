"""Synthetic activity tracks with known ground truth, and defect injection.

Archetypes are deliberately crude: gravity on +Y, a sinusoid (plus one
harmonic) per axis, and Gaussian noise. Orientation defects are signed axis
permutations, so each corrupted segment maps back to the original exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from harrepair.ingest import ACTIVITIES, Dataset, Track
from harrepair.orientation import CANONICAL, GRAVITY, OrientationCase, axis_means
from harrepair.resample import estimate_rate

WISDM_START_NS = 252207666810782


class ScheduleOutOfRange(ValueError):
    pass


class DurationMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Archetype:
    activity: str
    freq_hz: float
    amplitude: tuple  # per-axis oscillation amplitude, m/s^2
    offset: tuple  # per-axis mean; Y carries gravity
    noise_std: float
    harmonic: float = 0.0

    @property
    def static(self) -> bool:
        return max(self.amplitude) < 3 * self.noise_std


ARCHETYPES = {
    "A": Archetype("A", 2.0, (1.5, 3.0, 1.2), (0.6, GRAVITY, 2.0), 0.5, 0.3),
    "B": Archetype("B", 3.0, (3.5, 8.0, 3.0), (0.6, GRAVITY, 2.0), 0.8, 0.5),
    "C": Archetype("C", 1.5, (1.0, 1.6, 2.6), (0.6, GRAVITY, 2.0), 0.5, 0.6),
    "D": Archetype("D", 0.25, (0.02, 0.02, 0.02), (0.6, GRAVITY, 4.0), 0.05),
    "E": Archetype("E", 0.25, (0.02, 0.02, 0.02), (1.2, GRAVITY, 1.5), 0.05),
}
_FIDGET = Archetype("F", 1.0, (0.3, 0.3, 0.3), (0.6, GRAVITY, 3.0), 0.2)


def archetype_for(activity: str) -> Archetype:
    """A-E have their own archetype; the remaining codes share a low-motion one."""
    if activity not in ACTIVITIES:
        raise ValueError(f"illegal activity {activity!r}")
    return ARCHETYPES.get(activity) or replace(_FIDGET, activity=activity)


def generate(
    archetype: Archetype,
    duration: float,
    rate: float,
    seed,
    subject_id: int = 1600,
    device: str = "phone",
    sensor: str = "accel",
    start_ts: int = WISDM_START_NS,
    noise_std: float | None = None,
) -> Track:
    """Canonical (case 1, facing out) track of ``duration * rate`` samples.

    Frequency, amplitudes and the X/Z offsets vary a little with ``seed``
    (a per-subject style); the Y mean stays at gravity.
    """
    if duration <= 0 or rate <= 0:
        raise ValueError("duration and rate must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    f = archetype.freq_hz * rng.uniform(0.9, 1.1)
    amp = np.asarray(archetype.amplitude) * rng.uniform(0.8, 1.2, 3)
    offset = np.asarray(archetype.offset, dtype=np.float64).copy()
    offset[[0, 2]] += rng.uniform(-0.2, 0.2, 2)
    # the axes share one gait phase up to a small per-axis lag
    phase = rng.uniform(0, 2 * np.pi, (2, 1)) + rng.normal(0.0, 0.2, (2, 3))
    h = archetype.harmonic
    wave = (np.sin(2 * np.pi * f * t[:, None] + phase[0]) + h * np.sin(4 * np.pi * f * t[:, None] + phase[1])) / (1 + h)
    sigma = archetype.noise_std if noise_std is None else noise_std
    values = offset + amp * wave + rng.normal(0.0, sigma, (n, 3))
    if sensor == "gyro":
        values = 0.3 * (values - offset)
    ticks = np.rint(t * 1e9).astype(np.int64)
    return Track(subject_id, archetype.activity, device, sensor, start_ts + ticks, values, 1e-9)


def orientation_matrix(case: OrientationCase) -> np.ndarray:
    """Map canonical (x, y, z) to what a device in ``case`` records."""
    m = {
        1: [[1, 0, 0], [0, 1, 0]],
        2: [[0, 1, 0], [-1, 0, 0]],
        3: [[-1, 0, 0], [0, -1, 0]],
        4: [[0, -1, 0], [1, 0, 0]],
    }[case.label]
    z = [0, 0, -1] if case.z_facing == "in" else [0, 0, 1]
    return np.array(m + [z], dtype=np.float64)


@dataclass(frozen=True)
class CorruptionSpec:
    schedule: tuple = ((0.0, CANONICAL),)
    true_rate: float = 20.0
    jitter_std: float = 0.0
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "schedule": [[s, str(c)] for s, c in self.schedule],
            "true_rate": self.true_rate,
            "jitter_std": self.jitter_std,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorruptionSpec":
        return cls(
            tuple((float(s), OrientationCase.parse(c)) for s, c in d["schedule"]),
            d["true_rate"],
            d["jitter_std"],
            d["seed"],
        )


def _check_schedule(schedule, duration: float):
    starts = [float(s) for s, _ in schedule]
    if not starts or starts[0] != 0.0:
        raise ScheduleOutOfRange("schedule must start at second 0")
    if any(b <= a for a, b in zip(starts, starts[1:])):
        raise ScheduleOutOfRange("schedule entries must be strictly time-ordered")
    if starts[-1] >= duration:
        raise ScheduleOutOfRange(f"schedule entry at {starts[-1]} s is beyond the {duration} s track")
    return np.array(starts)


def segment_index(seconds: np.ndarray, schedule) -> np.ndarray:
    starts = np.array([float(s) for s, _ in schedule])
    return np.searchsorted(starts, seconds + 1e-9, side="right") - 1


def apply_orientation(values, seconds, schedule, inverse: bool = False) -> np.ndarray:
    """Apply (or undo) the schedule's orientation maps segment by segment."""
    values = np.asarray(values, dtype=np.float64)
    seg = segment_index(np.asarray(seconds), schedule)
    out = np.empty_like(values)
    for i, (_, case) in enumerate(schedule):
        m = orientation_matrix(case)
        sel = seg == i
        out[sel] = values[sel] @ (m if inverse else m.T)
    return out


def corrupt(track: Track, spec: CorruptionSpec) -> Track:
    """Impose the spec's orientation schedule, then re-time to ``spec.true_rate``.

    The input is a canonical 20 Hz track. Re-timing interpolates onto the
    true-rate grid (``duration * true_rate`` samples) and jitters the
    recorded timestamps by at most 0.4 of a period.
    """
    src_rate = estimate_rate(track).snapped_hz
    duration = len(track) / src_rate
    _check_schedule(spec.schedule, duration)
    t = track.seconds
    values = apply_orientation(track.values, t, spec.schedule)
    if spec.true_rate == src_rate and spec.jitter_std == 0:
        return track.replace(values=values)
    rng = np.random.default_rng(spec.seed)
    n_out = int(round(duration * spec.true_rate))
    grid = np.arange(n_out) / spec.true_rate
    values = np.column_stack([np.interp(grid, t, values[:, k]) for k in range(3)])
    period = 1.0 / spec.true_rate
    jitter = np.clip(rng.normal(0.0, spec.jitter_std, n_out), -0.4 * period, 0.4 * period) if spec.jitter_std else 0.0
    ticks = np.rint((grid + jitter) / track.tick_seconds).astype(np.int64)
    return track.replace(values=values, timestamps=track.timestamps[0] + ticks)


def expected_cases(spec: CorruptionSpec, n_windows: int, window_seconds: float) -> list:
    """Scheduled case per repair window; None where a window straddles a change."""
    out = []
    starts = [float(s) for s, _ in spec.schedule]
    for w in range(n_windows):
        a, b = w * window_seconds, (w + 1) * window_seconds
        inside = [i for i, s in enumerate(starts) if a < s < b - 1e-9]
        if inside:
            out.append(None)
        else:
            idx = int(segment_index(np.array([a]), spec.schedule)[0])
            out.append(spec.schedule[idx][1])
    return out


@dataclass
class OracleVerdict:
    mean_diffs: np.ndarray  # (windows, 3), m/s^2
    checked: np.ndarray  # windows counted toward pass/fail
    case_agreement: float | None
    tolerance_g: float
    passed: bool
    notes: list = field(default_factory=list)

    @property
    def max_diff_g(self) -> float:
        d = np.abs(self.mean_diffs[self.checked])
        return float(d.max() / GRAVITY) if d.size else 0.0


def oracle_compare(
    original: Track,
    repaired: Track,
    tolerance_g: float = 0.05,
    window_seconds: float = 10.0,
    rate: float = 20.0,
    log=None,
    spec: CorruptionSpec | None = None,
) -> OracleVerdict:
    """Compare per-window axis means of a repaired track with its ground truth.

    With a corruption spec, windows straddling a scheduled orientation change
    are reported but not judged, and (given the repair log) the detected
    cases are scored against the schedule.
    """
    if abs(original.span_seconds - repaired.span_seconds) > 1.0 / rate + 1e-9:
        raise DurationMismatch(f"spans differ: {original.span_seconds:.3f} s vs {repaired.span_seconds:.3f} s")
    n = min(len(original), len(repaired))
    w = max(1, int(round(window_seconds * rate)))
    bounds = [(s, min(s + w, n)) for s in range(0, n, w)]
    diffs = np.array([axis_means(repaired.values[s:e]) - axis_means(original.values[s:e]) for s, e in bounds])
    checked = np.ones(len(bounds), dtype=bool)
    agreement = None
    notes = []
    if spec is not None:
        exp = expected_cases(spec, len(bounds), window_seconds)
        checked = np.array([c is not None for c in exp])
        if (~checked).any():
            notes.append(f"{int((~checked).sum())} window(s) straddle a scheduled change")
        if log is not None:
            pairs = [(c, e) for c, e in zip(log.cases, exp) if e is not None]
            agreement = float(np.mean([c == e for c, e in pairs])) if pairs else 1.0
    max_diff = np.abs(diffs[checked]).max() if checked.any() else 0.0
    passed = bool(max_diff <= tolerance_g * GRAVITY and (agreement is None or agreement == 1.0))
    return OracleVerdict(diffs, checked, agreement, tolerance_g, passed, notes)


def track_seed(seed: int, subject: int, activity: str, device: str, sensor: str = "accel") -> list[int]:
    return [seed, subject, ord(activity), ("phone", "watch").index(device), ("accel", "gyro").index(sensor)]


def make_dataset(
    subjects,
    activities=tuple("ABCDE"),
    duration: float = 180.0,
    rate: float = 20.0,
    device: str = "phone",
    sensor: str = "accel",
    seed: int = 0,
    noise_std: float | None = None,
) -> Dataset:
    tracks = [
        generate(archetype_for(a), duration, rate, track_seed(seed, s, a, device, sensor), s, device, sensor, noise_std=noise_std)
        for s in subjects
        for a in activities
    ]
    return Dataset.from_tracks(tracks)


def random_spec(rng: np.random.Generator, duration: float, window_seconds: float = 10.0, rates=(20.0, 50.0), flip_prob: float = 0.3, jitter_std: float = 0.001) -> CorruptionSpec:
    """A random orientation variant, optionally with one window-aligned flip."""
    cases = [OrientationCase(label, facing) for facing in ("out", "in") for label in (1, 2, 3, 4)]
    first = cases[rng.integers(len(cases))]
    schedule = [(0.0, first)]
    n_windows = int(duration // window_seconds)
    if n_windows >= 2 and rng.random() < flip_prob:
        at = float(window_seconds * rng.integers(1, n_windows))
        other = [c for c in cases if c != first]
        schedule.append((at, other[rng.integers(len(other))]))
    return CorruptionSpec(tuple(schedule), float(rates[rng.integers(len(rates))]), jitter_std, int(rng.integers(2**31)))


def make_cross_device_corpus(
    subjects,
    duration: float = 60.0,
    seed: int = 0,
    activities=tuple("ABCDE"),
    window_seconds: float = 10.0,
):
    """Phone tracks carrying orientation and rate defects; clean watch tracks.

    Returns:
        ``(phone, watch, truth)`` where ``truth`` maps each phone track key to
        its :class:`CorruptionSpec`.
    """
    rng = np.random.default_rng([seed, 99])
    clean_phone = make_dataset(subjects, activities, duration, 20.0, "phone", "accel", seed)
    watch = make_dataset(subjects, activities, duration, 20.0, "watch", "accel", seed)
    phone, truth = [], {}
    for t in clean_phone:
        spec = random_spec(rng, duration, window_seconds)
        truth[t.key] = spec
        phone.append(corrupt(t, spec))
    return Dataset.from_tracks(phone), watch, truth


def write_truth(path, truth: dict) -> None:
    doc = {"{},{},{},{}".format(*k): spec.to_dict() for k, spec in sorted(truth.items())}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_truth(path) -> dict:
    out = {}
    for k, d in json.loads(Path(path).read_text()).items():
        s, a, dev, sen = k.split(",")
        out[(int(s), a, dev, sen)] = CorruptionSpec.from_dict(d)
    return out

