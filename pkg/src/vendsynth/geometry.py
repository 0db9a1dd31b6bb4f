"""Triangle meshes, OBJ loading, bounding boxes and placement footprints."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

DEGENERATE_AREA = 1e-12


class MeshError(ValueError):
    """Raised for invalid meshes or unreadable OBJ files."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Indexed triangle mesh with one UV per vertex.

    Positions are in meters. Arrays are made read-only on construction so a
    mesh can be shared between threads and frames.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    uvs: np.ndarray
    texture_id: str | None = None

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        uv = np.array(self.uvs, dtype=np.float64).reshape(-1, 2)
        if len(v) == 0:
            raise MeshError("mesh has no vertices")
        if not np.all(np.isfinite(v)):
            raise MeshError("mesh has non-finite vertex coordinates")
        if len(uv) != len(v):
            raise MeshError(f"expected {len(v)} uvs, got {len(uv)}")
        if not np.all(np.isfinite(uv)) or uv.min(initial=0.0) < -1e-9 or uv.max(initial=0.0) > 1 + 1e-9:
            raise MeshError("uv coordinates must lie in [0, 1]")
        if t.size:
            if t.min() < 0 or t.max() >= len(v):
                raise MeshError("triangle index out of range")
            areas = triangle_areas(v, t)
            bad = np.flatnonzero(areas <= DEGENERATE_AREA)
            if bad.size:
                raise MeshError(f"degenerate triangle {int(bad[0])} (area {areas[bad[0]]:.3g})")
        for a in (v, t, uv):
            a.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "uvs", uv)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def with_vertices(self, vertices: np.ndarray) -> TriMesh:
        return TriMesh(vertices, self.triangles, self.uvs, self.texture_id)

    def vertex_normals(self) -> np.ndarray:
        """Area-weighted unit vertex normals; zero for unreferenced vertices."""
        v, t = self.vertices, self.triangles
        fn = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        n = np.zeros_like(v)
        for k in range(3):
            np.add.at(n, t[:, k], fn)
        length = np.linalg.norm(n, axis=1, keepdims=True)
        return np.divide(n, length, out=np.zeros_like(n), where=length > 0)


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a = vertices[triangles[:, 0]]
    cr = np.cross(vertices[triangles[:, 1]] - a, vertices[triangles[:, 2]] - a)
    return 0.5 * np.linalg.norm(cr, axis=1)


@dataclass(frozen=True)
class AABB:
    min: tuple[float, float, float]
    max: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(float(x) for x in self.min)
        hi = tuple(float(x) for x in self.max)
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"AABB min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def extents(self) -> np.ndarray:
        return np.subtract(self.max, self.min)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.min) + np.asarray(self.max))


@dataclass(frozen=True)
class Disc:
    """Circle on the holding plane; ``center`` is (x, z) in meters."""

    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"disc radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def area(self) -> float:
        return math.pi * self.radius**2


class Pose(Enum):
    """Resting pose of an object on the plane.

    ``LYING_X`` / ``LYING_Z`` rotate the object so that its local X (resp. Z)
    axis points up, i.e. it lies on its side.
    """

    STANDING = "standing"
    LYING_X = "lying_x"
    LYING_Z = "lying_z"


# Rotations taking local coordinates to the posed frame (Y up).
_POSE_ROTATIONS = {
    Pose.STANDING: np.eye(3),
    # +90 deg about Z: local X -> world Y
    Pose.LYING_X: np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]),
    # -90 deg about X: local Z -> world Y
    Pose.LYING_Z: np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, -1.0, 0.0]]),
}


def pose_rotation(pose: Pose) -> np.ndarray:
    return _POSE_ROTATIONS[pose].copy()


def posed_extents(aabb: AABB, pose: Pose) -> np.ndarray:
    """Extents (dx, dy, dz) of the box after applying ``pose``."""
    return np.abs(_POSE_ROTATIONS[pose]) @ aabb.extents


def compute_aabb(mesh: TriMesh) -> AABB:
    if mesh.n_vertices == 0:
        raise MeshError("cannot bound an empty mesh")
    return AABB(tuple(mesh.vertices.min(axis=0)), tuple(mesh.vertices.max(axis=0)))


def footprint_excircle(aabb: AABB, pose: Pose) -> Disc:
    """Circumscribed circle of the box's ground footprint in ``pose``.

    The footprint is the projection along Y after the pose rotation; the disc
    is centred on the footprint centre.
    """
    dx, _, dz = posed_extents(aabb, pose)
    if dx <= 0 or dz <= 0:
        raise ValueError(f"footprint has zero extent ({dx} x {dz}) in pose {pose.value}")
    c = _POSE_ROTATIONS[pose] @ aabb.center
    return Disc((c[0], c[2]), 0.5 * math.hypot(dx, dz))


def _parse_index(token: str, count: int, lineno: int, what: str) -> int:
    try:
        i = int(token)
    except ValueError:
        raise MeshError(f"malformed {what} index {token!r}", lineno) from None
    if i < 0:
        i = count + i
    else:
        i -= 1
    if not 0 <= i < count:
        raise MeshError(f"{what} index {token} out of range (have {count})", lineno)
    return i


def load_mesh(path: str | Path, texture_id: str | None = None) -> TriMesh:
    """Load a Wavefront OBJ with positions, texture coordinates and faces.

    Polygons are fan-triangulated. Corners that pair one position with
    different texture coordinates become separate vertices, so a position may
    appear more than once in the result (UV seams).
    """
    path = Path(path)
    positions: list[tuple[float, float, float]] = []
    texcoords: list[tuple[float, float]] = []
    corner_map: dict[tuple[int, int], int] = {}
    tris: list[tuple[int, int, int]] = []
    lineno = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tag, *rest = line.split()
            if tag == "v":
                if len(rest) < 3:
                    raise MeshError("vertex needs 3 coordinates", lineno)
                try:
                    positions.append(tuple(float(x) for x in rest[:3]))
                except ValueError:
                    raise MeshError(f"malformed vertex {line!r}", lineno) from None
            elif tag == "vt":
                if len(rest) < 2:
                    raise MeshError("texture coordinate needs 2 values", lineno)
                try:
                    texcoords.append((float(rest[0]), float(rest[1])))
                except ValueError:
                    raise MeshError(f"malformed texture coordinate {line!r}", lineno) from None
            elif tag == "f":
                if len(rest) < 3:
                    raise MeshError("face needs at least 3 corners", lineno)
                corners = []
                for tok in rest:
                    parts = tok.split("/")
                    if len(parts) < 2 or not parts[1]:
                        raise MeshError(f"face corner {tok!r} has no texture coordinate", lineno)
                    vi = _parse_index(parts[0], len(positions), lineno, "vertex")
                    ti = _parse_index(parts[1], len(texcoords), lineno, "texture")
                    key = (vi, ti)
                    if key not in corner_map:
                        corner_map[key] = len(corner_map)
                    corners.append(corner_map[key])
                for k in range(1, len(corners) - 1):
                    tris.append((corners[0], corners[k], corners[k + 1]))
            # other statements (vn, o, g, s, usemtl, mtllib) are ignored
    if not tris:
        raise MeshError("mesh has no faces", lineno)
    order = sorted(corner_map.items(), key=lambda kv: kv[1])
    verts = np.array([positions[vi] for (vi, _), _ in order])
    uvs = np.array([texcoords[ti] for (_, ti), _ in order])
    try:
        return TriMesh(verts, np.array(tris), uvs, texture_id)
    except MeshError as exc:
        raise MeshError(str(exc), lineno) from None


def save_obj(mesh: TriMesh, path: str | Path) -> None:
    """Write ``mesh`` as OBJ; each vertex gets its own ``vt`` entry."""
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"vt {u:.9g} {v:.9g}" for u, v in mesh.uvs]
    lines += [f"f {a + 1}/{a + 1} {b + 1}/{b + 1} {c + 1}/{c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def weld(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Merge vertices with identical positions.

    Returns ``(positions, inverse, triangles)`` where ``positions[inverse]``
    reproduces ``mesh.vertices`` and ``triangles`` index the merged set.
    """
    pos, inverse = np.unique(mesh.vertices, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    return pos, inverse, inverse[mesh.triangles]


def one_ring(n_vertices: int, triangles: np.ndarray) -> list[np.ndarray]:
    """Sorted neighbour indices of every vertex."""
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e = np.concatenate([e, e[:, ::-1]])
    e = e[e[:, 0] != e[:, 1]]
    e = np.unique(e, axis=0)
    splits = np.searchsorted(e[:, 0], np.arange(n_vertices + 1))
    return [e[splits[i]:splits[i + 1], 1] for i in range(n_vertices)]


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle on the holding plane, (x, z) in meters."""

    xmin: float
    zmin: float
    xmax: float
    zmax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.zmax > self.zmin):
            raise ValueError(f"degenerate rectangle {self}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def depth(self) -> float:
        return self.zmax - self.zmin

    @property
    def area(self) -> float:
        return self.width * self.depth


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``x -> rotation @ x + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ np.asarray(self.rotation).T + np.asarray(self.translation)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m
