"""Point-cloud file I/O: whitespace XYZ and ASCII PLY.

Writers emit floats with repr-faithful precision ("%.17g") so a
write/read round trip is bit-exact and reruns produce byte-identical
files.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import PointFileError
from .geometry import LandmarkPairs, PointSet

__all__ = [
    "read_points",
    "write_points",
    "read_xyz",
    "write_xyz",
    "read_ply",
    "write_ply",
    "read_landmarks",
]


def _format_row(row) -> str:
    return " ".join(f"{v:.17g}" for v in row)


def read_xyz(path, *, frame: str = "source", unit: str = "mm") -> PointSet:
    """Read a plain text file with one ``x y z`` triple per line."""
    rows = []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        toks = line.split("#", 1)[0].split()
        if not toks:
            continue
        if len(toks) != 3:
            raise PointFileError(
                f"expected 3 coordinates per line, got {len(toks)}", line_no
            )
        try:
            rows.append([float(t) for t in toks])
        except ValueError as exc:
            raise PointFileError(f"invalid coordinate in {toks}", line_no) from exc
    if not rows:
        raise PointFileError(f"{path}: no points found")
    return PointSet(np.asarray(rows), frame, unit)


def write_xyz(path, points: PointSet | np.ndarray) -> None:
    pts = getattr(points, "points", points)
    lines = [_format_row(row) for row in np.asarray(pts, dtype=np.float64)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path, *, frame: str = "source", unit: str = "mm") -> PointSet:
    """Read vertex coordinates from an ASCII PLY file."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise PointFileError("not a PLY file (missing 'ply' magic)", 1)

    n_vertices = None
    properties: list[str] = []
    in_vertex_element = False
    body_start = None
    for line_no, line in enumerate(lines[1:], start=2):
        toks = line.split()
        if not toks:
            continue
        if toks[0] == "format":
            if toks[1] != "ascii":
                raise PointFileError(f"only ascii PLY is supported, got {toks[1]}", line_no)
        elif toks[0] == "element":
            in_vertex_element = toks[1] == "vertex"
            if in_vertex_element:
                try:
                    n_vertices = int(toks[2])
                except (IndexError, ValueError) as exc:
                    raise PointFileError("bad vertex element declaration", line_no) from exc
        elif toks[0] == "property" and in_vertex_element:
            properties.append(toks[-1])
        elif toks[0] == "end_header":
            body_start = line_no
            break
    if body_start is None:
        raise PointFileError("PLY header never ended (missing end_header)")
    if n_vertices is None:
        raise PointFileError("PLY header declares no vertex element")
    for coord in ("x", "y", "z"):
        if coord not in properties:
            raise PointFileError(f"PLY vertex element lacks property {coord!r}")
    col = {c: properties.index(c) for c in ("x", "y", "z")}

    rows = np.empty((n_vertices, 3))
    body = lines[body_start:]
    if len([ln for ln in body if ln.strip()]) < n_vertices:
        raise PointFileError(
            f"PLY declares {n_vertices} vertices but the body is shorter"
        )
    filled = 0
    for offset, line in enumerate(body, start=body_start + 1):
        toks = line.split()
        if not toks:
            continue
        if filled == n_vertices:
            break
        if len(toks) < len(properties):
            raise PointFileError(
                f"vertex line has {len(toks)} values, expected {len(properties)}",
                offset,
            )
        try:
            rows[filled] = [float(toks[col["x"]]), float(toks[col["y"]]), float(toks[col["z"]])]
        except ValueError as exc:
            raise PointFileError(f"invalid vertex value in {toks}", offset) from exc
        filled += 1
    if filled != n_vertices:
        raise PointFileError(
            f"PLY declares {n_vertices} vertices but only {filled} were found"
        )
    return PointSet(rows, frame, unit)


def write_ply(path, points: PointSet | np.ndarray) -> None:
    pts = np.asarray(getattr(points, "points", points), dtype=np.float64)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {pts.shape[0]}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    body = [_format_row(row) for row in pts]
    Path(path).write_text("\n".join(header + body) + "\n")


def read_points(path, *, frame: str = "source", unit: str = "mm") -> PointSet:
    """Read a point cloud, dispatching on the file extension."""
    if str(path).lower().endswith(".ply"):
        return read_ply(path, frame=frame, unit=unit)
    return read_xyz(path, frame=frame, unit=unit)


def write_points(path, points: PointSet | np.ndarray) -> None:
    if str(path).lower().endswith(".ply"):
        write_ply(path, points)
    else:
        write_xyz(path, points)


def read_landmarks(source_path, target_path, *, unit: str = "mm") -> LandmarkPairs:
    """Read row-paired landmark files (same count required)."""
    src = read_points(source_path, frame="source", unit=unit)
    tgt = read_points(target_path, frame="target", unit=unit)
    return LandmarkPairs(src.points, tgt.points)
