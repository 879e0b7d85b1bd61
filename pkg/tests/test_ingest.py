import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harrepair.ingest import (
    ACTIVITIES,
    Dataset,
    IllegalActivity,
    LoadError,
    MalformedLine,
    Sample,
    Track,
    detect_unit,
    format_line,
    infer_stream,
    load_dataset,
    parse_line,
    write_dataset,
    write_dataset_tree,
)


def test_parse_line_maps_fields():
    s = parse_line("1600,A,252207666810782,-0.36,8.79,1.05;")
    assert s == Sample(1600, "A", 252207666810782, -0.36, 8.79, 1.05)


def test_parse_line_tolerates_whitespace_and_missing_semicolon():
    assert parse_line("  1601, B ,5,1,2,3 \n") == Sample(1601, "B", 5, 1.0, 2.0, 3.0)


def test_parse_line_rejects_n():
    with pytest.raises(IllegalActivity):
        parse_line("1600,N,1,0,0,0;")


@pytest.mark.parametrize(
    "line",
    ["1600,A,1,0,0", "1600,A,1,0,0,0,0;", "1600,A,abc,0,0,0;", "x,A,1,0,0,0", "1600,A,1,nan,0,0;", "0,A,1,0,0,0"],
)
def test_parse_line_malformed(line):
    with pytest.raises(MalformedLine):
        parse_line(line)


def test_legal_activity_set():
    assert "N" not in ACTIVITIES
    assert ACTIVITIES[0] == "A" and ACTIVITIES[-1] == "S"
    with pytest.raises(IllegalActivity):
        parse_line("1600,T,1,0,0,0;")


def _write_lines(path, lines):
    path.write_text("".join(lines))
    return path


def _lines(subject, activity, n, start=252207666810782, step=50_000_000):
    return [format_line(subject, activity, start + i * step, 0.1 * i, 9.8, -0.5) for i in range(n)]


def test_load_counts_and_unit(tmp_path):
    p = _write_lines(tmp_path / "data_1600_accel_phone.txt", _lines(1600, "A", 3600))
    ds, report = load_dataset([p])
    assert len(ds) == 1
    t = ds[(1600, "A", "phone", "accel")]
    assert len(t) == 3600
    assert t.tick_seconds == 1e-9
    assert report.lines_read == report.lines_parsed == 3600
    assert report.units[str(p)] == "ns"


def test_skip_and_count_vs_strict(tmp_path):
    lines = _lines(1600, "A", 10)
    lines.insert(4, "1600,A,garbage;\n")
    p = _write_lines(tmp_path / "data_1600_accel_phone.txt", lines)
    ds, report = load_dataset([p])
    assert report.lines_skipped == 1
    assert len(ds[(1600, "A", "phone", "accel")]) == 10
    assert report.lines_read == report.lines_parsed + report.lines_skipped
    with pytest.raises(LoadError, match=r"data_1600_accel_phone.txt:5"):
        load_dataset([p], policy="strict")


def test_duplicates_dropped_keep_first(tmp_path):
    lines = [format_line(1600, "A", 1000, 1.0, 2.0, 3.0), format_line(1600, "A", 1000, 9.0, 9.0, 9.0), format_line(1600, "A", 1050, 4.0, 5.0, 6.0)]
    p = _write_lines(tmp_path / "data_1600_accel_watch.txt", lines)
    ds, report = load_dataset([p])
    t = ds[(1600, "A", "watch", "accel")]
    assert report.duplicates_dropped == 1
    np.testing.assert_array_equal(t.values[0], [1.0, 2.0, 3.0])
    assert t.tick_seconds == 1e-3


def test_unit_detection_threshold():
    assert detect_unit([10**14]) == "ns"
    assert detect_unit([10**14 - 1]) == "ms"


def test_infer_stream(tmp_path):
    assert infer_stream(tmp_path / "data_1601_gyro_watch.txt") == ("watch", "gyro")
    assert infer_stream(tmp_path / "raw" / "phone" / "accel" / "x.txt") == ("phone", "accel")
    assert infer_stream(tmp_path / "x.txt", "watch", "accel") == ("watch", "accel")
    with pytest.raises(LoadError):
        infer_stream(tmp_path / "x.txt")


def test_protocol_total_from_files(tmp_path):
    # 51 subjects x 17 activities x 3600 samples of phone/accel, spread over two files.
    acts = ACTIVITIES[:17]
    halves = [range(1600, 1626), range(1626, 1651)]
    paths = []
    for i, subjects in enumerate(halves):
        p = tmp_path / "phone" / "accel" / f"part{i}.txt"
        p.parent.mkdir(parents=True, exist_ok=True)
        with p.open("w") as fh:
            for s in subjects:
                for a in acts:
                    fh.writelines(f"{s},{a},{1000 + 50 * k},0,9.8,0;\n" for k in range(3600))
        paths.append(p)
    ds, report = load_dataset(paths)
    assert sum(len(t) for t in ds) == 3_121_200
    assert report.lines_parsed == 3_121_200


def test_write_single_sample(tmp_path):
    t = Track(1600, "A", "phone", "accel", [5], [[1.0, 2.0, 3.0]])
    p = write_dataset(Dataset.from_tracks([t]), tmp_path / "out.txt")
    assert p.read_text() == "1600,A,5,1.000000,2.000000,3.000000;\n"


def test_write_empty(tmp_path):
    p = write_dataset(Dataset(), tmp_path / "empty.txt")
    assert p.read_text() == ""


def test_write_refuses_mixed_streams(tmp_path):
    a = Track(1600, "A", "phone", "accel", [5], [[1.0, 2.0, 3.0]])
    b = Track(1600, "A", "watch", "accel", [5], [[1.0, 2.0, 3.0]])
    with pytest.raises(ValueError):
        write_dataset(Dataset.from_tracks([a, b]), tmp_path / "x.txt")
    paths = write_dataset_tree(Dataset.from_tracks([a, b]), tmp_path / "tree")
    ds, _ = load_dataset(paths)
    assert set(ds.tracks) == {a.key, b.key}


def test_missing_pairs():
    tracks = [Track(s, a, "phone", "accel", [1, 2, 3], np.zeros((3, 3))) for s in (1608, 1609) for a in "AB"]
    ds = Dataset.from_tracks([t for t in tracks if t.key[:2] != (1609, "B")])
    assert ds.missing_pairs("phone", "accel") == [(1609, "B")]


def test_track_rejects_non_increasing():
    with pytest.raises(ValueError):
        Track(1600, "A", "phone", "accel", [1, 1], np.zeros((2, 3)))


def test_track_is_read_only():
    t = Track(1600, "A", "phone", "accel", [1, 2], np.zeros((2, 3)))
    with pytest.raises(ValueError):
        t.values[0, 0] = 1.0


track_rows = st.lists(
    st.tuples(
        st.integers(0, 10**6),
        st.floats(-40, 40, allow_nan=False),
        st.floats(-40, 40, allow_nan=False),
        st.floats(-40, 40, allow_nan=False),
    ),
    min_size=1,
    max_size=40,
    unique_by=lambda r: r[0],
)


@settings(max_examples=60, deadline=None)
@given(rows=track_rows, perm_seed=st.integers(0, 2**16))
def test_loading_sorts_any_permutation(tmp_path_factory, rows, perm_seed):
    d = tmp_path_factory.mktemp("perm")
    order = np.random.default_rng(perm_seed).permutation(len(rows))
    p = d / "data_1600_accel_phone.txt"
    p.write_text("".join(format_line(1600, "C", *rows[i]) for i in order))
    ds, _ = load_dataset([p])
    t = ds[(1600, "C", "phone", "accel")]
    assert np.all(np.diff(t.timestamps) > 0)
    assert len(t) == len(rows)


@settings(max_examples=40, deadline=None)
@given(rows=track_rows)
def test_round_trip_is_stable(tmp_path_factory, rows):
    d = tmp_path_factory.mktemp("rt")
    p = d / "data_1600_accel_phone.txt"
    p.write_text("".join(format_line(1600, "D", *r) for r in rows))
    first, _ = load_dataset([p])
    q = write_dataset(first, d / "data_1600_accel_phone_copy.txt")
    second, _ = load_dataset([q], device="phone", sensor="accel")
    assert first.tracks.keys() == second.tracks.keys()
    for k in first.tracks:
        assert first[k].same_content(second[k], atol=1e-6)
