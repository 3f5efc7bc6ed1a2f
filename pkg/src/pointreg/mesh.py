"""Triangle-mesh loading (OFF format) and surface point sampling."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateGeometryError, DimensionError, MeshParseError
from .geometry import PointSet

__all__ = ["TriangleMesh", "load_off_mesh", "sample_surface"]


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Vertices (V, 3) and triangle indices (F, 3), indices validated."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64)
        faces = np.asarray(self.faces, dtype=np.int64)
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise DimensionError(f"vertices must have shape (V, 3), got {verts.shape}")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise DimensionError(f"faces must have shape (F, 3), got {faces.shape}")
        if not np.isfinite(verts).all():
            raise DimensionError("mesh vertices contain non-finite coordinates")
        if faces.size and (faces.min() < 0 or faces.max() >= verts.shape[0]):
            raise DimensionError(
                f"face indices must lie in [0, {verts.shape[0]}), "
                f"got range [{faces.min()}, {faces.max()}]"
            )
        verts, faces = verts.copy(), faces.copy()
        verts.flags.writeable = False
        faces.flags.writeable = False
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)

    def triangle_areas(self) -> np.ndarray:
        a = self.vertices[self.faces[:, 0]]
        b = self.vertices[self.faces[:, 1]]
        c = self.vertices[self.faces[:, 2]]
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def _tokens(line: str) -> list[str]:
    # '#' starts a comment anywhere on the line.
    return line.split("#", 1)[0].split()


def load_off_mesh(path) -> TriangleMesh:
    """Parse an OFF mesh file.

    Faces with more than three vertices are fan-triangulated; zero-area
    triangles are dropped after parsing.  Malformed content raises
    :class:`MeshParseError` with the offending 1-based line number.
    """
    path = Path(path)
    raw_lines = path.read_text().splitlines()

    # Iterator of (line_number, tokens) skipping blank/comment lines.
    numbered = [(i + 1, _tokens(line)) for i, line in enumerate(raw_lines)]
    numbered = [(no, toks) for no, toks in numbered if toks]
    if not numbered:
        raise MeshParseError("file contains no data")

    pos = 0
    line_no, toks = numbered[pos]
    pos += 1
    counts: list[str]
    if toks[0] == "OFF":
        if len(toks) > 1:
            counts = toks[1:]  # header and counts share a line
            counts_line = line_no
        else:
            if pos >= len(numbered):
                raise MeshParseError("missing vertex/face counts", line_no)
            counts_line, counts = numbered[pos]
            pos += 1
    elif toks[0].startswith("OFF"):
        # Some files glue the keyword to the first count ("OFF123 ...").
        counts = [toks[0][3:], *toks[1:]]
        counts_line = line_no
    else:
        raise MeshParseError(f"expected OFF header, got {toks[0]!r}", line_no)

    if len(counts) < 2:
        raise MeshParseError("expected vertex and face counts", counts_line)
    try:
        n_vertices, n_faces = int(counts[0]), int(counts[1])
    except ValueError as exc:
        raise MeshParseError(f"invalid counts {counts[:3]}", counts_line) from exc
    if n_vertices < 1:
        raise MeshParseError("mesh declares no vertices", counts_line)

    vertices = np.empty((n_vertices, 3))
    for i in range(n_vertices):
        if pos >= len(numbered):
            raise MeshParseError(
                f"expected {n_vertices} vertices, file ended after {i}",
                numbered[-1][0],
            )
        line_no, toks = numbered[pos]
        pos += 1
        if len(toks) != 3:
            raise MeshParseError(
                f"vertex needs exactly 3 coordinates, got {len(toks)}", line_no
            )
        try:
            vertices[i] = [float(t) for t in toks]
        except ValueError as exc:
            raise MeshParseError(f"invalid vertex coordinate in {toks}", line_no) from exc

    triangles: list[tuple[int, int, int]] = []
    for i in range(n_faces):
        if pos >= len(numbered):
            raise MeshParseError(
                f"expected {n_faces} faces, file ended after {i}", numbered[-1][0]
            )
        line_no, toks = numbered[pos]
        pos += 1
        try:
            arity = int(toks[0])
            idx = [int(t) for t in toks[1 : 1 + arity]]
        except ValueError as exc:
            raise MeshParseError(f"invalid face line {toks}", line_no) from exc
        if arity < 3:
            raise MeshParseError(f"face needs at least 3 vertices, got {arity}", line_no)
        if len(toks) < 1 + arity:
            raise MeshParseError(
                f"face declares {arity} vertices but lists {len(toks) - 1}", line_no
            )
        for v in idx:
            if v < 0 or v >= n_vertices:
                raise MeshParseError(
                    f"face references vertex {v} outside [0, {n_vertices})", line_no
                )
        for k in range(1, arity - 1):  # fan split around the first vertex
            triangles.append((idx[0], idx[k], idx[k + 1]))

    faces = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    mesh = TriangleMesh(vertices, faces)
    areas = mesh.triangle_areas()
    if (areas == 0.0).any():
        mesh = TriangleMesh(vertices, faces[areas > 0.0])
    return mesh


def sample_surface(
    mesh: TriangleMesh, n: int, seed: int, *, frame: str = "source", unit: str = "mm"
) -> PointSet:
    """Draw ``n`` points uniformly by area from the mesh surface.

    Triangles are chosen proportionally to area, then a uniform
    barycentric point is drawn in each (square-root trick).
    Deterministic for a fixed seed.
    """
    if n < 1:
        raise ValueError("sample count must be at least 1")
    if mesh.faces.shape[0] == 0:
        raise DegenerateGeometryError("mesh has no faces to sample")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0.0:
        raise DegenerateGeometryError("mesh has zero total surface area")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(mesh.faces.shape[0], size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    sqrt_u = np.sqrt(u)
    bary = np.column_stack([1.0 - sqrt_u, sqrt_u * (1.0 - v), sqrt_u * v])
    tri = mesh.vertices[mesh.faces[chosen]]  # (n, 3 corners, 3)
    points = np.einsum("nc,nck->nk", bary, tri)
    return PointSet(points, frame, unit)
