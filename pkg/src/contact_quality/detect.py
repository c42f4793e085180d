"""Candidate contact-pair detection in a multi-surface scene."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path

from .errors import GeometryError
from .features import min_gap_points
from .geometry import LabeledPointSet, SurfacePair, aabb_of, load_scene

DEFAULT_FRACTION = 0.05


@dataclass(frozen=True)
class Scene:
    surfaces: tuple[LabeledPointSet, ...]

    def __post_init__(self):
        surfaces = tuple(sorted(self.surfaces, key=lambda s: s.surface_id))
        ids = [s.surface_id for s in surfaces]
        if len(ids) < 2:
            raise GeometryError(f"a scene needs at least 2 surfaces, got {len(ids)}")
        if len(set(ids)) != len(ids):
            raise GeometryError(f"duplicate surface ids in scene: {ids}")
        if ids[0] < 1:
            raise GeometryError("surface ids must be >= 1")
        object.__setattr__(self, "surfaces", surfaces)

    @classmethod
    def from_file(cls, path: str | Path) -> "Scene":
        return cls(tuple(load_scene(path)))

    @property
    def ids(self) -> list[int]:
        return [s.surface_id for s in self.surfaces]


@dataclass(frozen=True)
class CandidatePair:
    id_a: int
    id_b: int
    gap: float
    pair: SurfacePair

    def to_dict(self, diagonal: float) -> dict:
        rel = self.gap / diagonal if diagonal > 0 else 0.0
        return {"surface_a": self.id_a, "surface_b": self.id_b, "gap": self.gap, "gap_rel": rel}


def body_diagonal(scene: Scene) -> float:
    """Largest AABB diagonal over the individual surfaces."""
    return max(aabb_of(s.points).diagonal for s in scene.surfaces)


def detect_candidates(scene: Scene, fraction: float = DEFAULT_FRACTION) -> list[CandidatePair]:
    """All surface pairs whose min gap is within ``fraction`` of the body diagonal.

    Pairs are ordered by (lower id, higher id); each is relabeled to ids 1 and 2
    with the lower original id as side a.
    """
    if not fraction > 0:
        raise ValueError(f"fraction must be positive, got {fraction}")
    tol = fraction * body_diagonal(scene)
    out = []
    for a, b in itertools.combinations(scene.surfaces, 2):
        gap = min_gap_points(a.points, b.points)
        if gap <= tol:
            pair = SurfacePair(a.relabel(1), b.relabel(2))
            out.append(CandidatePair(a.surface_id, b.surface_id, gap, pair))
    return out


def detect_pairs(scene: Scene, fraction: float = DEFAULT_FRACTION) -> list[SurfacePair]:
    return [c.pair for c in detect_candidates(scene, fraction)]
