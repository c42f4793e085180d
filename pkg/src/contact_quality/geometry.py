"""Point sets, triangle meshes and the transforms applied to them.

Points are stored as ``(n, 3)`` float64 arrays; a whole array carries one
surface id. Arrays held by the dataclasses are marked read-only so that
instances can be shared freely between threads.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    GeometryError,
    MeshFormatError,
    PointFileError,
    UnsupportedFormatError,
)

log = logging.getLogger(__name__)

POINT_HEADER = ("x", "y", "z", "surface_id")
DEGENERATE_AREA = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LabeledPointSet:
    points: np.ndarray
    surface_id: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise GeometryError(f"points must have shape (n, 3), got {pts.shape}")
        if len(pts) == 0:
            raise GeometryError("point set is empty")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("point set contains non-finite coordinates")
        if int(self.surface_id) < 1:
            raise GeometryError(f"surface_id must be >= 1, got {self.surface_id}")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "surface_id", int(self.surface_id))

    def __len__(self):
        return len(self.points)

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def relabel(self, surface_id: int) -> "LabeledPointSet":
        return LabeledPointSet(self.points, surface_id)


@dataclass(frozen=True)
class SurfacePair:
    side_a: LabeledPointSet
    side_b: LabeledPointSet

    def __post_init__(self):
        if self.side_a.surface_id == self.side_b.surface_id:
            raise GeometryError("both sides of a pair carry the same surface id")

    @classmethod
    def from_arrays(cls, a, b) -> "SurfacePair":
        return cls(LabeledPointSet(a, 1), LabeledPointSet(b, 2))

    def all_points(self) -> np.ndarray:
        return np.concatenate([self.side_a.points, self.side_b.points])

    def swapped(self) -> "SurfacePair":
        return SurfacePair.from_arrays(self.side_b.points, self.side_a.points)


@dataclass(frozen=True)
class Aabb:
    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        lo = _frozen(self.min_corner)
        hi = _frozen(self.max_corner)
        if lo.shape != (3,) or hi.shape != (3,):
            raise GeometryError("box corners must be 3-vectors")
        if np.any(lo > hi):
            raise GeometryError("box min corner exceeds max corner")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @property
    def extent(self) -> np.ndarray:
        return self.max_corner - self.min_corner

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min_corner + self.max_corner)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extent))

    def contains(self, points: np.ndarray) -> bool:
        points = np.asarray(points)
        return bool(np.all(points >= self.min_corner) and np.all(points <= self.max_corner))

    def padded(self, pad: float) -> "Aabb":
        return Aabb(self.min_corner - pad, self.max_corner + pad)


def aabb_of(points: np.ndarray) -> Aabb:
    points = np.asarray(points, dtype=np.float64)
    return Aabb(points.min(axis=0), points.max(axis=0))


def union_aabb(pair: SurfacePair) -> Aabb:
    """Tight axis-aligned box around both sides of ``pair``."""
    return aabb_of(pair.all_points())


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self):
        v = _frozen(np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3).copy()
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise GeometryError("triangle index out of range")
        if not np.all(np.isfinite(v)):
            raise GeometryError("mesh has non-finite vertices")
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    def areas(self) -> np.ndarray:
        return triangle_areas(self.vertices[self.triangles])


def triangle_areas(corners: np.ndarray) -> np.ndarray:
    """Areas of triangles given as ``(m, 3, 3)`` corner arrays."""
    e1 = corners[:, 1] - corners[:, 0]
    e2 = corners[:, 2] - corners[:, 0]
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


# --------------------------------------------------------------------------
# point files


def _parse_point_rows(path: Path):
    path = Path(path)
    if not path.is_file():
        raise PointFileError(f"{path}: no such file")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != POINT_HEADER:
            raise PointFileError(f"{path}:1: expected header {','.join(POINT_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise PointFileError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                xyz = [float(c) for c in row[:3]]
                sid = int(row[3])
            except ValueError as exc:
                raise PointFileError(f"{path}:{lineno}: malformed row {row!r}") from exc
            if not all(np.isfinite(xyz)):
                raise PointFileError(f"{path}:{lineno}: non-finite coordinate")
            if sid < 1:
                raise PointFileError(f"{path}:{lineno}: surface_id must be >= 1")
            yield xyz, sid


def load_scene(path) -> list[LabeledPointSet]:
    """Read a point CSV holding any number of surfaces, sorted by id."""
    groups: dict[int, list[list[float]]] = {}
    for xyz, sid in _parse_point_rows(path):
        groups.setdefault(sid, []).append(xyz)
    if not groups:
        raise PointFileError(f"{path}: no points")
    return [LabeledPointSet(np.array(groups[s]), s) for s in sorted(groups)]


def load_points(path) -> SurfacePair:
    """Read a two-surface point CSV (ids 1 and 2) into a :class:`SurfacePair`."""
    surfaces = {s.surface_id: s for s in load_scene(path)}
    extra = sorted(set(surfaces) - {1, 2})
    if extra:
        raise PointFileError(f"{path}: unexpected surface ids {extra}; pairs use ids 1 and 2")
    for sid in (1, 2):
        if sid not in surfaces:
            raise PointFileError(f"{path}: missing surface {sid}")
    return SurfacePair(surfaces[1], surfaces[2])


def write_points(sets: SurfacePair | Iterable[LabeledPointSet], path) -> None:
    if isinstance(sets, SurfacePair):
        sets = (sets.side_a, sets.side_b)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POINT_HEADER)
        for s in sets:
            for x, y, z in s.points:
                w.writerow((repr(float(x)), repr(float(y)), repr(float(z)), s.surface_id))


# --------------------------------------------------------------------------
# STL


def read_stl_ascii(path) -> TriangleMesh:
    """Parse an ASCII STL, deduplicating vertices by exact coordinates.

    Facets whose area is at most ``1e-12`` are dropped and noted in
    ``mesh.warnings``.
    """
    path = Path(path)
    raw = path.read_bytes()
    if raw[:5] != b"solid":
        raise UnsupportedFormatError(f"{path}: not an ASCII STL (binary STL is unsupported)")
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError as exc:
        raise UnsupportedFormatError(f"{path}: non-ASCII content, binary STL is unsupported") from exc

    tokens = text.split()
    index: dict[tuple[float, float, float], int] = {}
    verts: list[tuple[float, float, float]] = []
    tris: list[tuple[int, int, int]] = []
    warnings: list[str] = []
    n_facets = 0
    i = 0
    n = len(tokens)

    def expect(word):
        nonlocal i
        if i >= n or tokens[i] != word:
            got = tokens[i] if i < n else "end of file"
            raise MeshFormatError(f"{path}: facet {n_facets}: expected {word!r}, got {got!r}")
        i += 1

    def floats(count):
        nonlocal i
        if i + count > n:
            raise MeshFormatError(f"{path}: facet {n_facets}: truncated")
        try:
            vals = tuple(float(t) for t in tokens[i:i + count])
        except ValueError as exc:
            raise MeshFormatError(f"{path}: facet {n_facets}: bad number") from exc
        i += count
        return vals

    while i < n:
        tok = tokens[i]
        if tok == "solid":
            i += 1
            # optional solid name runs until the first 'facet' or 'endsolid'
            while i < n and tokens[i] not in ("facet", "endsolid"):
                i += 1
        elif tok == "endsolid":
            i += 1
            while i < n and tokens[i] not in ("solid",):
                i += 1
        elif tok == "facet":
            i += 1
            expect("normal")
            floats(3)
            expect("outer")
            expect("loop")
            corners = []
            for _ in range(3):
                expect("vertex")
                corners.append(floats(3))
            expect("endloop")
            expect("endfacet")
            n_facets += 1
            c = np.array(corners)
            if not np.all(np.isfinite(c)):
                raise MeshFormatError(f"{path}: facet {n_facets}: non-finite vertex")
            if triangle_areas(c[None])[0] <= DEGENERATE_AREA:
                msg = f"facet {n_facets} is degenerate (zero area), dropped"
                warnings.append(msg)
                log.warning("%s: %s", path, msg)
                continue
            ids = []
            for p in corners:
                if p not in index:
                    index[p] = len(verts)
                    verts.append(p)
                ids.append(index[p])
            tris.append(tuple(ids))
        else:
            raise MeshFormatError(f"{path}: unexpected token {tok!r}")

    return TriangleMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                        np.array(tris, dtype=np.int64).reshape(-1, 3),
                        tuple(warnings))


def sample_mesh(mesh: TriangleMesh, points_per_triangle: int, seed=0,
                surface_id: int = 1) -> LabeledPointSet:
    """Mesh vertices plus ``points_per_triangle`` area-uniform samples per triangle."""
    if points_per_triangle < 0:
        raise GeometryError("points_per_triangle must be >= 0")
    if len(mesh.triangles) == 0:
        raise GeometryError("cannot sample an empty mesh")
    k = int(points_per_triangle)
    if k == 0:
        return LabeledPointSet(mesh.vertices, surface_id)
    rng = np.random.default_rng(seed)
    corners = mesh.vertices[mesh.triangles]  # (T, 3, 3)
    r1 = np.sqrt(rng.random((len(corners), k)))
    r2 = rng.random((len(corners), k))
    w = np.stack([1.0 - r1, r1 * (1.0 - r2), r1 * r2], axis=-1)  # (T, k, 3)
    samples = np.einsum("tkc,tcd->tkd", w, corners).reshape(-1, 3)
    return LabeledPointSet(np.concatenate([mesh.vertices, samples]), surface_id)


def barycentric(points: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of ``points`` (assumed in the triangle's plane)."""
    a, b, c = tri
    v0, v1, v2 = b - a, c - a, points - a
    d00, d01, d11 = v0 @ v0, v0 @ v1, v1 @ v1
    d20, d21 = v2 @ v0, v2 @ v1
    den = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    return np.stack([1.0 - v - w, v, w], axis=-1)


# --------------------------------------------------------------------------
# transforms

_AXES = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}


def rotation_matrix(axis, angle_deg: float) -> np.ndarray:
    """Rodrigues rotation; multiples of 90 degrees are snapped to exact values."""
    if isinstance(axis, str):
        axis = _AXES[axis.lower()]
    u = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(u)
    if norm == 0 or not np.isfinite(norm):
        raise GeometryError("rotation axis must be a non-zero finite vector")
    u = u / norm
    if float(angle_deg) % 90.0 == 0.0:
        quarter = int(round(float(angle_deg) / 90.0)) % 4
        c, s = (1.0, 0.0, -1.0, 0.0)[quarter], (0.0, 1.0, 0.0, -1.0)[quarter]
    else:
        th = np.deg2rad(angle_deg)
        c, s = np.cos(th), np.sin(th)
    k = np.array([[0.0, -u[2], u[1]], [u[2], 0.0, -u[0]], [-u[1], u[0], 0.0]])
    return c * np.eye(3) + s * k + (1.0 - c) * np.outer(u, u)


def transform_points(points: np.ndarray, rotation=None, translation=(0.0, 0.0, 0.0),
                     scale: float = 1.0, center=None) -> np.ndarray:
    """``center + R @ (scale * (p - center)) + translation``; center defaults to the centroid."""
    if not scale > 0:
        raise GeometryError(f"scale must be positive, got {scale}")
    points = np.asarray(points, dtype=np.float64)
    if rotation is None and scale == 1.0:
        # pure translation stays exact (no round trip through the center)
        return points + np.asarray(translation, dtype=np.float64)
    c = points.mean(axis=0) if center is None else np.asarray(center, dtype=np.float64)
    r = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
    return c + (scale * (points - c)) @ r.T + np.asarray(translation, dtype=np.float64)


def transform(pset: LabeledPointSet, rotation: tuple[Sequence[float] | str, float] | None = None,
              translation=(0.0, 0.0, 0.0), scale: float = 1.0) -> LabeledPointSet:
    """Scale and rotate about the centroid, then translate.

    ``rotation`` is an ``(axis, angle_deg)`` tuple. The inverse of
    ``transform(s, (ax, a), t, k)`` is ``transform(., (ax, -a), -t, 1/k)``.
    """
    r = None if rotation is None else rotation_matrix(*rotation)
    return LabeledPointSet(transform_points(pset.points, r, translation, scale), pset.surface_id)


def transform_pair(pair: SurfacePair, rotation_mat=None, translation=(0.0, 0.0, 0.0),
                   scale: float = 1.0, center=None) -> SurfacePair:
    """Apply one rigid+scale transform to both sides jointly (shared center)."""
    c = pair.all_points().mean(axis=0) if center is None else center
    return SurfacePair(
        LabeledPointSet(transform_points(pair.side_a.points, rotation_mat, translation, scale, c),
                        pair.side_a.surface_id),
        LabeledPointSet(transform_points(pair.side_b.points, rotation_mat, translation, scale, c),
                        pair.side_b.surface_id),
    )
