"""Handcrafted contact features and the deterministic labelling rule.

The rule maps (relative gap, angle, overlap) to one of three classes and a
score band; it stands in for human annotation of synthetic pairs.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegenerateGeometryError
from .geometry import LabeledPointSet, SurfacePair, union_aabb

GOOD, BAD, NEUTRAL = 1, 2, 3
RANK_TOL = 1e-12
OVERLAP_RASTER = 32


# --------------------------------------------------------------------------
# proximity


def min_gap_brute(a: np.ndarray, b: np.ndarray) -> float:
    """O(n*m) minimum distance; the reference for :func:`min_gap`."""
    best = np.inf
    for start in range(0, len(a), 256):
        chunk = a[start:start + 256]
        diff = chunk[:, None, :] - b[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        best = min(best, float(d2.min()))
    return float(np.sqrt(best))


def _sq_dists(q: np.ndarray, c: np.ndarray) -> np.ndarray:
    # same arithmetic as min_gap_brute so both routes agree bit for bit
    diff = q[:, None, :] - c[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def min_gap_points(a: np.ndarray, b: np.ndarray) -> float:
    """Minimum cross distance via a uniform-grid hash over ``b``.

    Points of ``a`` are grouped by hash cell; for each group, shells of cells
    at growing Chebyshev radius ``r`` are scanned until the best squared
    distance found is below ``(r * h)^2``, the lower bound for any point
    further out.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) * len(b) <= 4096:
        return min_gap_brute(a, b)

    lo = np.minimum(a.min(axis=0), b.min(axis=0))
    hi = np.maximum(a.max(axis=0), b.max(axis=0))
    span = hi - lo
    volume_side = float(span.max())
    if volume_side == 0.0:
        return 0.0
    # ~n^(1/3) cells per side: tens of points per occupied cell on a surface,
    # which keeps the per-group python overhead below the vectorised work
    h = max(volume_side / max(np.cbrt(len(b)), 1.0), volume_side * 1e-9)
    cb = np.floor((b - lo) / h).astype(np.int64)
    ca = np.floor((a - lo) / h).astype(np.int64)
    dims = cb.max(axis=0).clip(min=0) + 1
    max_r = int(np.max(np.maximum(dims, ca.max(axis=0) + 1)))

    buckets: dict[tuple, list[int]] = {}
    for i, key in enumerate(map(tuple, cb)):
        buckets.setdefault(key, []).append(i)
    buckets_arr = {k: np.array(v) for k, v in buckets.items()}
    occupied = np.array(list(buckets_arr.keys()))

    groups: dict[tuple, list[int]] = {}
    for i, key in enumerate(map(tuple, ca)):
        groups.setdefault(key, []).append(i)

    best_all = np.inf
    for key, members in groups.items():
        cheb = np.abs(occupied - np.array(key)).max(axis=1)
        r = int(cheb.min())  # inner shells are empty
        if r > 0 and ((r - 1) * h) ** 2 > best_all:
            continue
        q = a[members]
        best = np.inf
        while r <= max_r:
            ring = occupied[cheb == r]
            if len(ring):
                idx = np.concatenate([buckets_arr[tuple(c)] for c in ring])
                best = min(best, float(_sq_dists(q, b[idx]).min()))
            # any point in a shell beyond r is at least r*h away
            if min(best, best_all) <= (r * h) ** 2:
                break
            r += 1
        best_all = min(best_all, best)
        if best_all == 0.0:
            break
    return float(np.sqrt(best_all))


def min_gap(pair: SurfacePair) -> float:
    return min_gap_points(pair.side_a.points, pair.side_b.points)


# --------------------------------------------------------------------------
# orientation


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    for c in v:
        if abs(c) > 1e-12:
            return v if c > 0 else -v
    return v


def principal_axes(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and eigenvectors (columns) of the point covariance."""
    p = np.asarray(points, dtype=np.float64)
    cov = np.cov((p - p.mean(axis=0)).T, bias=True)
    return np.linalg.eigh(cov)


def fitted_plane_normal(pset: LabeledPointSet | np.ndarray) -> np.ndarray:
    """Unit normal of the least-squares plane, first nonzero component positive."""
    pts = pset.points if isinstance(pset, LabeledPointSet) else np.asarray(pset, dtype=np.float64)
    if len(pts) < 3:
        raise DegenerateGeometryError(f"plane fit needs >= 3 points, got {len(pts)}")
    w, v = principal_axes(pts)
    if w[2] <= 0 or w[1] <= RANK_TOL * w[2]:
        raise DegenerateGeometryError("points are collinear or coincident; no unique plane")
    return _canonical_sign(v[:, 0] / np.linalg.norm(v[:, 0]))


def inter_surface_angle(pair: SurfacePair) -> float:
    na = fitted_plane_normal(pair.side_a)
    nb = fitted_plane_normal(pair.side_b)
    c = min(1.0, abs(float(na @ nb)))
    return float(np.degrees(np.arccos(c)))


# --------------------------------------------------------------------------
# overlap


def plane_basis(normal: np.ndarray) -> np.ndarray:
    """Two orthonormal in-plane axes (columns) for a unit ``normal``.

    The first axis is the world axis least aligned with the normal, projected
    into the plane; in-plane PCA axes are ill-defined for square patches.
    """
    ref = np.eye(3)[int(np.argmin(np.abs(normal)))]
    e1 = ref - (ref @ normal) * normal
    e1 /= np.linalg.norm(e1)
    return np.column_stack([e1, np.cross(normal, e1)])


def projected_overlap(pair: SurfacePair, raster: int = OVERLAP_RASTER) -> float:
    """Share of side-a's projected footprint cells that side-b also hits.

    Both sides are projected onto side-a's fitted plane. The raster spans
    side-a's projected bounds; side-b points outside it are ignored.
    """
    a = pair.side_a.points
    b = pair.side_b.points
    basis = plane_basis(fitted_plane_normal(a))
    origin = a.mean(axis=0)
    ua = (a - origin) @ basis
    ub = (b - origin) @ basis
    lo = ua.min(axis=0)
    ext = ua.max(axis=0) - lo
    ext[ext == 0] = 1.0

    def cells(u, clip):
        t = (u - lo) / ext
        if not clip:
            keep = np.all((t >= 0) & (t <= 1), axis=1)
            t = t[keep]
        idx = np.clip(np.floor(t * raster).astype(np.int64), 0, raster - 1)
        occ = np.zeros((raster, raster), dtype=bool)
        occ[idx[:, 0], idx[:, 1]] = True
        return occ

    occ_a = cells(ua, clip=True)
    occ_b = cells(ub, clip=False)
    return float((occ_a & occ_b).sum() / occ_a.sum())


# --------------------------------------------------------------------------
# features and labels


@dataclass(frozen=True)
class ContactFeatures:
    gap: float
    gap_rel: float
    angle_deg: float
    overlap_ab: float
    overlap_ba: float

    @property
    def overlap_frac(self) -> float:
        return self.overlap_ab


@dataclass(frozen=True)
class OracleThresholds:
    good_gap_rel: float = 0.02
    good_angle_deg: float = 10.0
    good_overlap: float = 0.7
    bad_gap_rel: float = 0.15
    bad_overlap: float = 0.05
    use_max_overlap: bool = False


@dataclass(frozen=True)
class LabelBand:
    class_label: int
    band: tuple[float, float]


BANDS = {GOOD: (90.0, 100.0), BAD: (0.0, 10.0), NEUTRAL: (40.0, 60.0)}


def padded_diagonal(pair: SurfacePair) -> float:
    box = union_aabb(pair)
    d = box.diagonal
    pad = 1e-6 * d if d > 0 else 1e-6
    return float(np.linalg.norm(box.extent + 2 * pad))


def compute_features(pair: SurfacePair, gap: float | None = None) -> ContactFeatures:
    """All oracle features; pass ``gap`` to reuse a known min distance (e.g. after a rigid motion)."""
    g = min_gap(pair) if gap is None else float(gap)
    return ContactFeatures(
        gap=g,
        gap_rel=g / padded_diagonal(pair),
        angle_deg=inter_surface_angle(pair),
        overlap_ab=projected_overlap(pair),
        overlap_ba=projected_overlap(pair.swapped()),
    )


def oracle_label(f: ContactFeatures, th: OracleThresholds = OracleThresholds()) -> LabelBand:
    overlap = max(f.overlap_ab, f.overlap_ba) if th.use_max_overlap else f.overlap_ab
    if f.gap_rel >= th.bad_gap_rel or overlap <= th.bad_overlap:
        cls = BAD
    elif f.gap_rel <= th.good_gap_rel and f.angle_deg <= th.good_angle_deg and overlap >= th.good_overlap:
        cls = GOOD
    else:
        cls = NEUTRAL
    return LabelBand(cls, BANDS[cls])


def feature_report(f: ContactFeatures, label: LabelBand) -> dict:
    d = asdict(f)
    return {
        "gap": d["gap"],
        "gap_rel": d["gap_rel"],
        "angle_deg": d["angle_deg"],
        "overlap_ab": d["overlap_ab"],
        "overlap_ba": d["overlap_ba"],
        "class": label.class_label,
        "band": list(label.band),
    }


@dataclass(frozen=True)
class LabelMargins:
    """Feature perturbations a label must survive to count as stable.

    One margin per threshold of :class:`OracleThresholds`; sized to roughly
    one fine-grid bin so stable labels are recoverable from the grids.
    """

    good_gap_rel: float = 0.015
    good_angle_deg: float = 5.0
    good_overlap: float = 0.08
    bad_gap_rel: float = 0.02
    bad_overlap: float = 0.015


def label_is_stable(f: ContactFeatures, th: OracleThresholds = OracleThresholds(),
                    margins: LabelMargins = LabelMargins()) -> bool:
    """True if no feature lies within its margin of a threshold that would flip the label."""
    label = oracle_label(f, th).class_label
    overlap = max(f.overlap_ab, f.overlap_ba) if th.use_max_overlap else f.overlap_ab
    near = [
        abs(f.gap_rel - th.good_gap_rel) < margins.good_gap_rel,
        abs(f.angle_deg - th.good_angle_deg) < margins.good_angle_deg,
        abs(overlap - th.good_overlap) < margins.good_overlap,
        abs(f.gap_rel - th.bad_gap_rel) < margins.bad_gap_rel,
        abs(overlap - th.bad_overlap) < margins.bad_overlap,
    ]
    if not any(near):
        return True
    # probe every corner of the margin box; the label regions are axis-aligned
    steps = [(-1, 0, 1)] * 3
    for sg, sa, so in itertools.product(*steps):
        g = max(f.gap_rel + sg * _margin_for(f.gap_rel, th.good_gap_rel, th.bad_gap_rel,
                                             margins.good_gap_rel, margins.bad_gap_rel), 0.0)
        a = min(max(f.angle_deg + sa * margins.good_angle_deg, 0.0), 90.0)
        o = min(max(overlap + so * _margin_for(overlap, th.good_overlap, th.bad_overlap,
                                               margins.good_overlap, margins.bad_overlap), 0.0), 1.0)
        probe = ContactFeatures(f.gap, g, a, o, o)
        if oracle_label(probe, th).class_label != label:
            return False
    return True


def _margin_for(value, t_good, t_bad, m_good, m_bad):
    # the margin of whichever threshold the value is closer to
    return m_good if abs(value - t_good) <= abs(value - t_bad) else m_bad
