import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from harrepair.ingest import Track
from harrepair.orientation import (
    GRAVITY,
    SWAP,
    EmptyTrack,
    IndeterminateOrientation,
    OrientationCase,
    Shift,
    apply_transforms,
    axis_means,
    detect_case,
    is_canonical,
    parse_transform,
    repair_track,
    repair_values,
    repair_window,
)
from harrepair.synth import ARCHETYPES, CorruptionSpec, corrupt, generate


def const_window(means, n=50):
    return np.tile(np.asarray(means, dtype=float), (n, 1))


@pytest.mark.parametrize(
    "means, label",
    [((0, 9.8, 0), 1), ((9.8, 0, 0), 2), ((0, -9.8, 0), 3), ((-9.8, 0, 0), 4)],
)
def test_detect_cases(means, label):
    assert detect_case(const_window(means)).label == label


def test_detect_facing_in_on_z_dominant():
    case = detect_case(const_window((0.5, 2.0, -9.5)))
    assert case.z_facing == "in" and case.gravity_axis == "z"


def test_detect_indeterminate():
    with pytest.raises(IndeterminateOrientation):
        detect_case(const_window((0.1, 0.2, -0.3)))


def test_shift_constant_axis():
    out, tr = repair_window(const_window((0.0, -9.8, 0.0)))
    np.testing.assert_allclose(out[:, 1], 9.8)
    (t,) = tr
    assert t.axis == 1 and t.amount == pytest.approx(2 * 9.8)


def test_swap_x_dominant():
    out, tr = repair_window(const_window((9.8, 0.1, 0.0)))
    np.testing.assert_allclose(axis_means(out), [0.1, 9.8, 0.0])
    assert tr == (SWAP,)


def test_canonical_window_untouched():
    w = const_window((0.05, 9.8, 0.02))
    out, tr = repair_window(w)
    assert tr == ()
    np.testing.assert_array_equal(out, w)


def test_tie_means_no_swap():
    _, tr = repair_window(const_window((4.0, 4.0, 1.0)))
    assert tr == ()


def test_transform_text_round_trip():
    for t in (Shift(2, 0.1 + 0.2), SWAP):
        assert parse_transform(str(t)) == t


def _track(values, rate=20):
    n = len(values)
    return Track(1638, "C", "phone", "accel", np.arange(n) * int(1e9 // rate), values)


def test_all_case3_track():
    base = generate(ARCHETYPES["C"], 180, 20, 3)
    c3 = corrupt(base, CorruptionSpec(((0.0, OrientationCase(3)),)))
    rep, log = repair_track(c3, 10, 20)
    assert len(log) == 18
    assert all(c == OrientationCase(3) for c in log.cases)
    assert all(any(isinstance(t, Shift) and t.axis == 1 for t in w.transforms) for w in log.windows)


def test_flip_in_last_window_is_one_change():
    base = generate(ARCHETYPES["C"], 180, 20, 4)
    spec = CorruptionSpec(((0.0, OrientationCase(1)), (170.0, OrientationCase(2))))
    rep, log = repair_track(corrupt(base, spec), 10, 20)
    assert log.case_changes() == 1
    assert log.cases[-1] == OrientationCase(2)
    assert is_canonical(rep.values[3400:])


def test_repair_twice_is_noop():
    base = generate(ARCHETYPES["A"], 60, 20, 5)
    spec = CorruptionSpec(((0.0, OrientationCase(4, "in")), (30.0, OrientationCase(3))))
    once, _ = repair_track(corrupt(base, spec), 10, 20)
    twice, log = repair_track(once, 10, 20)
    assert log.n_transforms == 0
    np.testing.assert_array_equal(once.values, twice.values)


def test_log_reproduces_output():
    base = generate(ARCHETYPES["B"], 60, 20, 6)
    spec = CorruptionSpec(((0.0, OrientationCase(2, "in")), (20.0, OrientationCase(4))))
    src = corrupt(base, spec)
    rep, log = repair_track(src, 10, 20)
    for w in log.windows:
        # go through the text form, as an audit reader would
        transforms = [parse_transform(s) for s in w.as_row()["transforms"].split(";") if s]
        np.testing.assert_array_equal(apply_transforms(src.values[w.start : w.end], transforms), rep.values[w.start : w.end])


def test_hysteresis_holds_near_zero_shift():
    # x hovers around zero: the one-window sign flip keeps the previous shift
    n = 40
    vals = np.zeros((4 * n, 3))
    vals[:, 1] = GRAVITY
    vals[:, 2] = 1.5
    for i, mx in enumerate((-0.05, 0.03, -0.04, -0.06)):
        vals[i * n : (i + 1) * n, 0] = mx + 0.01 * np.sin(np.arange(n))
    out, log = repair_values(vals, n)
    assert log.windows[1].held
    assert any(isinstance(t, Shift) and t.axis == 0 for t in log.windows[1].transforms)
    for w in log.windows:
        assert is_canonical(out[w.start : w.end])


def test_empty_track():
    with pytest.raises(EmptyTrack):
        repair_values(np.zeros((0, 3)), 10)


windows = arrays(
    np.float64,
    st.tuples(st.integers(1, 60), st.just(3)),
    elements=st.floats(-30, 30, allow_nan=False, allow_infinity=False),
)


@settings(max_examples=300, deadline=None)
@given(w=windows)
def test_repair_window_properties(w):
    out, tr = repair_window(w)
    m = axis_means(out)
    assert np.all(m >= -1e-9) and m[1] >= m[0] - 1e-9
    # shape preserved: no sample is mirrored, only offsets and an exchange
    shifted = apply_transforms(w, [t for t in tr if isinstance(t, Shift)])
    np.testing.assert_allclose(shifted - shifted.mean(0), w - w.mean(0), atol=1e-9)
    if SWAP in tr:
        np.testing.assert_array_equal(np.sort(out[:, 0]), np.sort(shifted[:, 1]))
    again, tr2 = repair_window(out)
    assert tr2 == ()


@settings(max_examples=100, deadline=None)
@given(
    w=arrays(np.float64, st.tuples(st.integers(5, 200), st.just(3)), elements=st.floats(-30, 30, allow_nan=False)),
    win=st.integers(1, 40),
)
def test_repair_values_idempotent_and_canonical(w, win):
    out, log = repair_values(w, win)
    for rec in log.windows:
        m = axis_means(out[rec.start : rec.end])
        assert np.all(m >= -1e-9) and m[1] >= m[0] - 1e-9
    out2, log2 = repair_values(out, win)
    assert log2.n_transforms == 0
    np.testing.assert_array_equal(out, out2)
