"""Point-cloud file I/O: XYZ and ASCII PLY round trips and error paths."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointreg.errors import PairingError, PointFileError
from pointreg.geometry import PointSet
from pointreg.pointio import (
    read_landmarks,
    read_points,
    read_ply,
    read_xyz,
    write_ply,
    write_points,
    write_xyz,
)


def _cloud(rng, n=32, frame="source", unit="mm"):
    return PointSet(rng.normal(scale=40.0, size=(n, 3)), frame, unit)


# ---------------------------------------------------------------------------
# XYZ


def test_xyz_round_trip_is_bit_exact(tmp_path, rng):
    cloud = _cloud(rng)
    path = tmp_path / "cloud.xyz"
    write_xyz(path, cloud)
    back = read_xyz(path, frame="source", unit="mm")
    np.testing.assert_array_equal(back.points, cloud.points)


def test_xyz_round_trip_extreme_values(tmp_path):
    pts = np.array(
        [
            [1e-300, -1e300, 0.1],
            [np.pi, -np.e, 2.0 / 3.0],
            [5e-324, -0.0, 1.7976931348623157e308],
        ]
    )
    path = tmp_path / "extreme.xyz"
    write_xyz(path, pts)
    np.testing.assert_array_equal(read_xyz(path).points, pts)


def test_xyz_rewrite_is_byte_identical(tmp_path, rng):
    cloud = _cloud(rng)
    a, b = tmp_path / "a.xyz", tmp_path / "b.xyz"
    write_xyz(a, cloud)
    write_xyz(b, cloud)
    assert a.read_bytes() == b.read_bytes()


def test_xyz_skips_comments_and_blank_lines(tmp_path):
    path = tmp_path / "cloud.xyz"
    path.write_text("# header\n1 2 3\n\n4 5 6 # trailing comment\n")
    pts = read_xyz(path).points
    np.testing.assert_array_equal(pts, [[1, 2, 3], [4, 5, 6]])


def test_xyz_wrong_column_count_reports_line(tmp_path):
    path = tmp_path / "bad.xyz"
    path.write_text("1 2 3\n4 5\n")
    with pytest.raises(PointFileError) as info:
        read_xyz(path)
    assert info.value.line == 2


def test_xyz_non_numeric_reports_line(tmp_path):
    path = tmp_path / "bad.xyz"
    path.write_text("1 2 3\n4 five 6\n")
    with pytest.raises(PointFileError) as info:
        read_xyz(path)
    assert info.value.line == 2


def test_xyz_empty_file_rejected(tmp_path):
    path = tmp_path / "empty.xyz"
    path.write_text("# nothing here\n")
    with pytest.raises(PointFileError):
        read_xyz(path)


def test_xyz_reader_applies_requested_tags(tmp_path):
    path = tmp_path / "cloud.xyz"
    path.write_text("0 0 0\n1 1 1\n")
    p = read_xyz(path, frame="target", unit="normalized")
    assert p.frame == "target" and p.unit == "normalized"


# ---------------------------------------------------------------------------
# PLY


def test_ply_round_trip_is_bit_exact(tmp_path, rng):
    cloud = _cloud(rng, n=17)
    path = tmp_path / "cloud.ply"
    write_ply(path, cloud)
    back = read_ply(path)
    np.testing.assert_array_equal(back.points, cloud.points)


def test_ply_header_declares_count_and_doubles(tmp_path, rng):
    cloud = _cloud(rng, n=5)
    path = tmp_path / "cloud.ply"
    write_ply(path, cloud)
    text = path.read_text().splitlines()
    assert text[0] == "ply"
    assert "element vertex 5" in text
    assert text.index("end_header") == 6


def test_ply_reads_shuffled_property_order(tmp_path):
    path = tmp_path / "cloud.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 2\n"
        "property double z\nproperty double x\nproperty double y\n"
        "end_header\n1 2 3\n4 5 6\n"
    )
    pts = read_ply(path).points
    np.testing.assert_array_equal(pts, [[2, 3, 1], [5, 6, 4]])


def test_ply_ignores_extra_vertex_properties(tmp_path):
    path = tmp_path / "cloud.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 1\n"
        "property double x\nproperty double y\nproperty double z\n"
        "property double confidence\nend_header\n1 2 3 0.9\n"
    )
    np.testing.assert_array_equal(read_ply(path).points, [[1, 2, 3]])


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("plyX\nend_header\n", "magic"),
        ("ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty double x\nend_header\n", "ascii"),
        ("ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\n1 2 3\n", "end_header"),
        ("ply\nformat ascii 1.0\nend_header\n", "vertex element"),
        ("ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nproperty double y\nend_header\n1 2\n", "property 'z'"),
        ("ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n1 2 3\n", "shorter"),
    ],
)
def test_ply_malformed_headers_rejected(tmp_path, text, fragment):
    path = tmp_path / "bad.ply"
    path.write_text(text)
    with pytest.raises(PointFileError) as info:
        read_ply(path)
    assert fragment in str(info.value)


def test_ply_short_vertex_line_reports_line_number(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_text(
        "ply\nformat ascii 1.0\nelement vertex 2\n"
        "property double x\nproperty double y\nproperty double z\n"
        "end_header\n1 2 3\n4 5\n"
    )
    with pytest.raises(PointFileError) as info:
        read_ply(path)
    assert info.value.line == 9


# ---------------------------------------------------------------------------
# dispatch + landmarks


def test_read_write_dispatch_on_extension(tmp_path, rng):
    cloud = _cloud(rng, n=8)
    for name in ("cloud.xyz", "cloud.ply", "cloud.PLY", "cloud.txt"):
        path = tmp_path / name
        write_points(path, cloud)
        back = read_points(path)
        np.testing.assert_array_equal(back.points, cloud.points)


def test_read_landmarks_pairs_rows(tmp_path, rng):
    src, tgt = _cloud(rng, n=6), _cloud(rng, n=6, frame="target")
    write_xyz(tmp_path / "s.xyz", src)
    write_xyz(tmp_path / "t.xyz", tgt)
    pairs = read_landmarks(tmp_path / "s.xyz", tmp_path / "t.xyz")
    np.testing.assert_array_equal(pairs.source, src.points)
    np.testing.assert_array_equal(pairs.target, tgt.points)


def test_read_landmarks_count_mismatch_rejected(tmp_path, rng):
    write_xyz(tmp_path / "s.xyz", _cloud(rng, n=6))
    write_xyz(tmp_path / "t.xyz", _cloud(rng, n=5))
    with pytest.raises(PairingError):
        read_landmarks(tmp_path / "s.xyz", tmp_path / "t.xyz")


@given(
    data=st.lists(
        st.lists(
            st.floats(
                min_value=-1e12, max_value=1e12, allow_nan=False, allow_infinity=False
            ),
            min_size=3,
            max_size=3,
        ),
        min_size=1,
        max_size=20,
    ),
    ply=st.booleans(),
)
@settings(max_examples=40, deadline=None)
def test_round_trip_property(tmp_path_factory, data, ply):
    pts = np.asarray(data, dtype=np.float64)
    path = tmp_path_factory.mktemp("io") / ("c.ply" if ply else "c.xyz")
    write_points(path, pts)
    np.testing.assert_array_equal(read_points(path).points, pts)
