import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harrepair.ingest import Track
from harrepair.preprocess import (
    NotEnoughSubjects,
    TooFewSubjects,
    WindowSet,
    build_windowset,
    leave_one_out,
    make_split,
    trim_and_window,
    window_count,
)
from harrepair.synth import make_dataset


def brute_windows(n, length, stride):
    return sum(1 for s in range(0, n, stride) if s + length <= n)


def track_of(n, activity="A", rate=20, gap_at=None):
    step = int(1e9 // rate)
    ts = np.arange(n, dtype=np.int64) * step
    if gap_at is not None:
        ts[gap_at:] += 30 * step
    vals = np.arange(3 * n, dtype=float).reshape(n, 3)
    return Track(1600, activity, "phone", "accel", ts + 10**14, vals)


@pytest.mark.parametrize("n, expected", [(3600, 161), (300 + 399, 15), (300 + 99, 0)])
def test_window_counts(n, expected):
    assert len(trim_and_window(track_of(n))) == expected
    assert brute_windows(n - 300, 100, 20) == expected


@settings(max_examples=200, deadline=None)
@given(n=st.integers(0, 2000), length=st.integers(1, 300), stride=st.integers(1, 100))
def test_window_count_formula(n, length, stride):
    assert window_count(n, length, stride) == brute_windows(n, length, stride)


def test_windows_are_contiguous_slices_after_trim():
    t = track_of(1000)
    for w in trim_and_window(t):
        assert w.offset >= 300
        np.testing.assert_array_equal(w.values, t.values[w.offset : w.offset + 100].T)


def test_windows_do_not_cross_gaps():
    t = track_of(1000, gap_at=600)
    wins = trim_and_window(t)
    assert all(w.offset + 100 <= 600 or w.offset >= 600 for w in wins)
    assert len(wins) == brute_windows(300, 100, 20) + brute_windows(400, 100, 20)


def test_non_class_activity_rejected():
    with pytest.raises(ValueError):
        trim_and_window(track_of(500, activity="F"))


def test_build_windowset_filters_classes():
    ds = make_dataset([1600, 1601], "ABF", 30, 20)
    ws = build_windowset(ds, "phone")
    per_track = brute_windows(600 - 300, 100, 20)
    assert len(ws) == 2 * 2 * per_track
    assert set(ws.labels.tolist()) == {0, 1}
    assert ws.values.shape[1:] == (3, 100)


def test_windowset_round_trip(tmp_path):
    ws = build_windowset(make_dataset([1600, 1601], "AD", 25, 20), "phone")
    ws.save(tmp_path / "w.npz")
    back = WindowSet.load(tmp_path / "w.npz")
    np.testing.assert_array_equal(back.values, ws.values)
    np.testing.assert_array_equal(back.labels, ws.labels)
    assert back.class_names == ws.class_names
    assert back.devices.tolist() == ws.devices.tolist()


def test_make_split_sizes():
    subjects = range(1600, 1651)
    plan = make_split(subjects, (41, 5, 5), seed=7)
    assert (len(plan.train), len(plan.validation), len(plan.test)) == (41, 5, 5)
    assert not (plan.train & plan.validation or plan.train & plan.test or plan.validation & plan.test)
    assert plan == make_split(subjects, (41, 5, 5), seed=7)
    assert make_split(subjects, (51, 0, 0)).train == frozenset(subjects)
    with pytest.raises(NotEnoughSubjects):
        make_split(range(10), (8, 2, 1))


@pytest.mark.parametrize("n", [2, 51])
def test_leave_one_out_partition(n):
    subjects = list(range(1600, 1600 + n))
    plans = list(leave_one_out(subjects))
    assert len(plans) == n
    tests = [s for p in plans for s in p.test]
    assert sorted(tests) == subjects
    for p in plans:
        assert len(p.test) == 1 and not p.validation
        assert p.train | p.test == set(subjects)


def test_leave_one_out_needs_two():
    with pytest.raises(TooFewSubjects):
        leave_one_out([1600])
