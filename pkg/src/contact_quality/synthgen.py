"""Synthetic labelled surface pairs: parallel/tilted squares and coaxial cylinders.

Labels come from :func:`features.oracle_label` applied to the generated
geometry. Base samples are expanded with joint random rotations (relative
pose preserved; draws that would change the oracle label are redrawn) and
split 75/25 by class with every augmented copy following its base sample.
"""

from __future__ import annotations

import itertools
import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .activation import MultiResInput, build_multires, padded_bounds
from .errors import GenerationError
from .features import (BAD, GOOD, NEUTRAL, ContactFeatures, LabelBand, LabelMargins,
                       OracleThresholds, compute_features, label_is_stable, oracle_label)
from .geometry import (LabeledPointSet, SurfacePair, load_points, rotation_matrix,
                       transform_pair, transform_points, write_points)

log = logging.getLogger(__name__)

FAMILIES = ("plane_pair", "concentric_cylinders")
DEFAULT_DENSITY = 2000.0
JITTER = 0.25  # fraction of lattice spacing


@dataclass(frozen=True)
class PairSpec:
    family: str = "plane_pair"
    gap: float = 0.0
    angle_deg: float = 0.0
    scale_b: float = 1.0
    lateral_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)
    density: float = DEFAULT_DENSITY
    seed: int = 0
    radius: float = 0.5  # cylinders only
    height: float = 1.0  # cylinders only

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if not self.density > 0:
            raise ValueError("density must be positive")
        if not self.scale_b > 0:
            raise ValueError("scale_b must be positive")
        object.__setattr__(self, "lateral_offset", tuple(float(v) for v in self.lateral_offset))


def _jittered_grid(nu: int, nv: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Cell-centred ``nu x nv`` lattice on the unit square, jittered within cells."""
    u = (np.arange(nu) + 0.5) / nu
    v = (np.arange(nv) + 0.5) / nv
    uu, vv = np.meshgrid(u, v, indexing="ij")
    uu = uu.ravel() + rng.uniform(-JITTER, JITTER, uu.size) / nu
    vv = vv.ravel() + rng.uniform(-JITTER, JITTER, vv.size) / nv
    return uu, vv


def _square(side: float, density: float, rng) -> np.ndarray:
    n = max(2, int(round(side * np.sqrt(density))))
    u, v = _jittered_grid(n, n, rng)
    return np.column_stack([(u - 0.5) * side, (v - 0.5) * side, np.zeros_like(u)])


def _cylinder(radius: float, height: float, density: float, rng) -> np.ndarray:
    n_theta = max(3, int(round(2 * np.pi * radius * np.sqrt(density))))
    n_z = max(2, int(round(height * np.sqrt(density))))
    u, v = _jittered_grid(n_theta, n_z, rng)
    th = 2 * np.pi * u
    return np.column_stack([radius * np.cos(th), radius * np.sin(th), (v - 0.5) * height])


def _place_b(points_b: np.ndarray, spec: PairSpec) -> np.ndarray:
    """Tilt side b about the x axis through its centroid, then shift it."""
    rot = rotation_matrix("x", spec.angle_deg)
    shift = np.array([0.0, 0.0, spec.gap]) + np.asarray(spec.lateral_offset)
    return transform_points(points_b, rot, shift, 1.0)


def gen_plane_pair(spec: PairSpec) -> SurfacePair:
    """Unit square at z=0 (side a) and a square of side ``scale_b`` (side b).

    Side b starts concentric with side a, is tilted by ``angle_deg`` about the
    in-plane x axis through its centroid, lifted by ``gap`` along +z and
    moved by ``lateral_offset``.
    """
    rng = np.random.default_rng(spec.seed)
    a = _square(1.0, spec.density, rng) + [0.5, 0.5, 0.0]
    b = _square(spec.scale_b, spec.density, rng) + [0.5, 0.5, 0.0]
    return SurfacePair(LabeledPointSet(a, 1), LabeledPointSet(_place_b(b, spec), 2))


def gen_concentric_cylinders(spec: PairSpec) -> SurfacePair:
    """Coaxial shells of radius ``r`` (side a) and ``r + gap`` (side b) about z.

    Side b has height ``height * scale_b``; tilt and offset apply to side b
    as in :func:`gen_plane_pair`, with the radial clearance replacing the lift.
    """
    rng = np.random.default_rng(spec.seed)
    a = _cylinder(spec.radius, spec.height, spec.density, rng)
    b = _cylinder(spec.radius + spec.gap, spec.height * spec.scale_b, spec.density, rng)
    rot = rotation_matrix("x", spec.angle_deg)
    b = transform_points(b, rot, np.asarray(spec.lateral_offset), 1.0)
    return SurfacePair(LabeledPointSet(a, 1), LabeledPointSet(b, 2))


def generate_pair(spec: PairSpec) -> SurfacePair:
    if spec.family == "plane_pair":
        return gen_plane_pair(spec)
    return gen_concentric_cylinders(spec)


# --------------------------------------------------------------------------
# samples


@dataclass
class ContactSample:
    id: str
    pair: SurfacePair
    input: MultiResInput
    label: int
    band: tuple[float, float]
    spec: PairSpec
    features: ContactFeatures | None = None
    augmentation_of: str | None = None
    rotation: dict | None = None  # {"axis", "angle_deg", "center"} for augmented copies


def make_sample(sample_id: str, spec: PairSpec, coarse_res=8, fine_res=16, cubic=True,
                thresholds: OracleThresholds = OracleThresholds()) -> ContactSample:
    pair = generate_pair(spec)
    f = compute_features(pair)
    lb = oracle_label(f, thresholds)
    return ContactSample(sample_id, pair, build_multires(pair, coarse_res, fine_res, cubic),
                         lb.class_label, lb.band, spec, f)


def rotate_pair(pair: SurfacePair, axis: str, angle_deg: float, center=None) -> SurfacePair:
    """Rotate both sides jointly; ``center`` defaults to the cubic padded-box center."""
    c = padded_bounds(pair).center if center is None else np.asarray(center)
    return transform_pair(pair, rotation_matrix(axis, angle_deg), center=c)


def augment_rotations(sample: ContactSample, n: int, seed, coarse_res=8, fine_res=16,
                      cubic=True, thresholds: OracleThresholds = OracleThresholds(),
                      max_tries: int = 50) -> list[ContactSample]:
    """``n`` copies, each rotated by a uniform angle about a random coordinate axis.

    The relative gap (axis-aligned box diagonal) and the overlap raster are
    not rotation invariant, so a draw whose oracle label differs from the
    base label is rejected and redrawn.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = np.random.default_rng(seed)
    out = []
    center = padded_bounds(sample.pair).center
    gap = sample.features.gap if sample.features is not None else None
    for i in range(n):
        for _ in range(max_tries):
            axis = "xyz"[int(rng.integers(3))]
            angle = float(rng.uniform(0.0, 360.0))
            pair = rotate_pair(sample.pair, axis, angle, center)
            if oracle_label(compute_features(pair, gap), thresholds).class_label == sample.label:
                break
        else:
            raise GenerationError(f"{sample.id}: no label-preserving rotation in {max_tries} draws")
        out.append(ContactSample(
            f"{sample.id}_r{i}", pair, build_multires(pair, coarse_res, fine_res, cubic),
            sample.label, sample.band, sample.spec, None, sample.id,
            {"axis": axis, "angle_deg": angle, "center": [float(v) for v in center]}))
    return out


# --------------------------------------------------------------------------
# generation plan


@dataclass(frozen=True)
class GenerationPlan:
    """Candidate parameter lattices plus the rule that picks base samples from them.

    Each block is a cartesian product. :meth:`specs` concatenates all blocks
    and shuffles them with the dataset seed; :func:`build_dataset` walks that
    order and keeps the first ``n_base`` candidates whose oracle label is
    stable under ``margins`` (``margins=None`` keeps everything and
    ``n_base=None`` keeps all accepted candidates).
    """

    # plane pairs: (gaps, angles, scales, x-offsets, y-offsets)
    plane_blocks: tuple = (
        # lateral slide vs lift
        ((0.0, 0.005, 0.06, 0.1, 0.14, 0.2, 0.3, 0.4, 0.5, 0.6), (0.0,), (1.0,),
         (0.0, 0.1, 0.3, 0.45, 0.6, 0.8), (0.0,)),
        # tilt vs lift
        ((0.0, 0.05, 0.15, 0.3, 0.5), (15.0, 30.0, 45.0, 60.0, 75.0, 90.0), (1.0,), (0.0,), (0.0,)),
        # shrink vs lift
        ((0.0, 0.01, 0.1, 0.25, 0.5), (0.0,), (0.3, 0.4, 0.5, 0.6, 0.7, 0.9, 0.95), (0.0,), (0.0,)),
        # tilt vs slide, in contact
        ((0.0,), (0.0, 20.0, 30.0, 45.0, 60.0, 90.0), (1.0,), (0.1, 0.4, 0.6), (0.0,)),
        # shrink vs tilt, in contact
        ((0.0,), (20.0, 45.0, 70.0, 90.0), (0.3, 0.5, 0.75), (0.0,), (0.0,)),
        # near-coincident variants
        ((0.0, 0.005, 0.01), (0.0, 2.0, 4.0), (1.0, 0.95), (0.0, 0.05), (0.0,)),
        ((0.0, 0.01), (0.0,), (1.0, 0.95), (0.03, 0.06), (0.03, 0.06)),
        ((0.0, 0.005, 0.01), (1.0, 3.0), (1.0, 0.97, 0.93), (0.0, 0.03), (0.0, 0.02)),
        # moderate lift with shrink, tilt and slide
        ((0.07, 0.12), (0.0, 25.0), (0.6, 0.85), (0.0, 0.2), (0.0,)),
        # clear separation with shrink and slide
        ((0.35, 0.45, 0.55), (0.0, 10.0), (0.5, 0.8), (0.0, 0.3), (0.0,)),
        # slide along the other axis
        ((0.0, 0.1, 0.3, 0.5), (0.0,), (1.0,), (0.0,), (0.1, 0.4, 0.55, 0.75)),
        ((0.06, 0.1), (0.0, 20.0), (1.0,), (0.0,), (0.15, 0.45)),
        # shrink vs slide, in contact
        ((0.0,), (0.0,), (0.5, 0.75, 0.9), (0.1, 0.25, 0.4), (0.0,)),
        # far and tilted
        ((0.35, 0.6), (20.0, 45.0, 70.0), (1.0, 0.6), (0.0,), (0.0,)),
    )
    # cylinders: (radial gaps as fraction of radius, heights, side-b height scales)
    cylinder_blocks: tuple = (
        ((0.0, 0.2, 0.3, 0.4, 0.5, 0.8), (0.5, 0.8, 1.0), (1.0, 0.6)),
        ((0.0,), (0.6, 0.7, 0.9), (1.0, 0.8, 0.5)),
        ((0.0,), (0.4, 0.55, 0.75, 0.85), (1.0, 0.9, 0.7)),
    )
    radius: float = 0.5
    density: float = DEFAULT_DENSITY
    augment: int = 4
    n_base: int | None = 300
    margins: LabelMargins | None = LabelMargins()

    def specs(self, seed: int) -> list[PairSpec]:
        """All candidates in seed-shuffled order, each with its own derived seed."""
        raw = []
        for block in self.plane_blocks:
            for g, a, s, ox, oy in itertools.product(*block):
                raw.append(dict(family="plane_pair", gap=g, angle_deg=a, scale_b=s,
                                lateral_offset=(ox, oy, 0.0)))
        for rel_gaps, heights, hscales in self.cylinder_blocks:
            for g, h, s in itertools.product(rel_gaps, heights, hscales):
                raw.append(dict(family="concentric_cylinders", gap=g * self.radius, height=h,
                                scale_b=s, radius=self.radius))
        ss = np.random.SeedSequence(seed)
        seeds = ss.generate_state(len(raw))
        order = np.random.default_rng(ss.spawn(1)[0]).permutation(len(raw))
        return [PairSpec(density=self.density, seed=int(seeds[i]), **raw[i]) for i in order]


@dataclass
class DatasetManifest:
    entries: list[dict]
    samples: list[ContactSample] = field(default_factory=list, repr=False)
    root: Path | None = None

    def split(self, name: str) -> list[ContactSample]:
        ids = {e["id"] for e in self.entries if e["split"] == name}
        return [s for s in self.samples if s.id in ids]

    def to_json(self) -> str:
        return json.dumps(self.entries, indent=1, sort_keys=True)


def _spec_params(spec: PairSpec) -> dict:
    d = asdict(spec)
    d.pop("family")
    d["lateral_offset"] = list(spec.lateral_offset)
    return d


def split_dataset(labels_by_base: dict[str, int], train_fraction: float = 0.75,
                  seed: int = 0) -> dict[str, str]:
    """Stratified base-sample split; returns ``{base_id: "train" | "validation"}``.

    Per-class train counts use largest-remainder rounding so the overall
    train count is ``round(train_fraction * N)``.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    by_class: dict[int, list[str]] = {}
    for sid, lab in labels_by_base.items():
        by_class.setdefault(lab, []).append(sid)
    for lab, ids in by_class.items():
        if len(ids) < 2:
            raise GenerationError(f"class {lab} has {len(ids)} base sample(s); need >= 2 to split")
    classes = sorted(by_class)
    quota = {c: train_fraction * len(by_class[c]) for c in classes}
    n_train = {c: int(np.floor(quota[c])) for c in classes}
    target = int(round(train_fraction * len(labels_by_base)))
    leftover = sorted(classes, key=lambda c: (-(quota[c] - n_train[c]), c))
    for c in leftover[:max(0, target - sum(n_train.values()))]:
        n_train[c] += 1
    rng = np.random.default_rng(seed)
    out = {}
    for c in classes:
        ids = sorted(by_class[c])
        # keep at least one sample of each class on both sides
        k = min(max(n_train[c], 1), len(ids) - 1)
        perm = rng.permutation(len(ids))
        for rank, j in enumerate(perm):
            out[ids[j]] = "train" if rank < k else "validation"
    return out


def build_dataset(plan: GenerationPlan = GenerationPlan(), seed: int = 0, out_dir=None,
                  coarse_res=8, fine_res=16, cubic=True, train_fraction=0.75,
                  thresholds: OracleThresholds = OracleThresholds()) -> DatasetManifest:
    """Generate, label, augment and split; optionally persist to ``out_dir``.

    Points are written once per base sample as ``points/<id>.csv``; augmented
    entries point at their base file and record the rotation in ``params``.
    The manifest file is written last, via an atomic rename.
    """
    base: list[ContactSample] = []
    for spec in plan.specs(seed):
        if plan.n_base is not None and len(base) == plan.n_base:
            break
        s = make_sample(f"s{len(base):04d}", spec, coarse_res, fine_res, cubic, thresholds)
        if plan.margins is None or label_is_stable(s.features, thresholds, plan.margins):
            base.append(s)
    if plan.n_base is not None and len(base) < plan.n_base:
        raise GenerationError(
            f"plan yields only {len(base)} label-stable candidates, {plan.n_base} requested")
    counts = {c: sum(s.label == c for s in base) for c in (GOOD, BAD, NEUTRAL)}
    log.info("base class counts %s", counts)
    for c, n in counts.items():
        if n == 0:
            raise GenerationError(f"class {c} empty")

    split = split_dataset({s.id: s.label for s in base}, train_fraction, seed)
    samples: list[ContactSample] = []
    aug_seeds = np.random.SeedSequence([seed, 1]).generate_state(len(base))
    for s, aseed in zip(base, aug_seeds):
        samples.append(s)
        samples.extend(augment_rotations(s, plan.augment, int(aseed), coarse_res, fine_res, cubic,
                                         thresholds))

    entries = []
    for s in samples:
        base_id = s.augmentation_of or s.id
        params = _spec_params(s.spec)
        if s.rotation is not None:
            params["rotation"] = s.rotation
        entries.append({
            "id": s.id,
            "points_path": f"points/{base_id}.csv",
            "family": s.spec.family,
            "params": params,
            "label": s.label,
            "band": list(s.band),
            "split": split[base_id],
            "augmentation_of": s.augmentation_of,
        })
    manifest = DatasetManifest(entries, samples)
    if out_dir is not None:
        write_manifest(manifest, out_dir)
    return manifest


def write_manifest(manifest: DatasetManifest, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"{out} is not writable")
    (out / "points").mkdir(exist_ok=True)
    for s in manifest.samples:
        if s.augmentation_of is None:
            write_points(s.pair, out / "points" / f"{s.id}.csv")
    fd, tmp = tempfile.mkstemp(dir=out, prefix=".manifest", suffix=".json")
    with os.fdopen(fd, "w") as fh:
        fh.write(manifest.to_json())
    os.replace(tmp, out / "manifest.json")
    manifest.root = out
    return out / "manifest.json"


def read_manifest(path) -> tuple[list[dict], Path]:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"{path}: manifest not found")
    entries = json.loads(path.read_text())
    if not isinstance(entries, list):
        raise ValueError(f"{path}: manifest must be a JSON array")
    return entries, path.parent


def load_entry_pairs(entries: list[dict], root: Path) -> list[SurfacePair]:
    """Materialise the point pair of every entry (base files read once)."""
    cache: dict[str, SurfacePair] = {}
    out = []
    for e in entries:
        p = e["points_path"]
        if p not in cache:
            cache[p] = load_points(root / p)
        pair = cache[p]
        rot = e["params"].get("rotation")
        if rot is not None:
            pair = rotate_pair(pair, rot["axis"], rot["angle_deg"], rot["center"])
        out.append(pair)
    return out


# --------------------------------------------------------------------------
# evaluation geometries


def sweep_pairs(kind: str, steps: int | None = None, seed: int = 0,
                density: float = DEFAULT_DENSITY) -> list[tuple[float, SurfacePair]]:
    """Parametric pair families for the translate / rotate / scale sweeps.

    translate: gap 0 -> 0.6 with side b slid by half a side (partial overlap);
    rotate: tilt 0 -> 90 degrees of coincident squares;
    scale: side b shrinks 1.0 -> 0.25 about the shared center.
    """
    if kind == "translate":
        vals = np.linspace(0.0, 0.6, steps or 8)
        make = lambda v: PairSpec(gap=float(v), lateral_offset=(0.5, 0.0, 0.0))
    elif kind == "rotate":
        vals = np.linspace(0.0, 90.0, steps or 7)
        make = lambda v: PairSpec(angle_deg=float(v))
    elif kind == "scale":
        vals = np.linspace(1.0, 0.25, steps or 4)
        make = lambda v: PairSpec(scale_b=float(v))
    else:
        raise ValueError(f"unknown sweep kind {kind!r}; expected translate, rotate or scale")
    out = []
    for v in vals:
        spec = make(v)
        spec = PairSpec(**{**asdict(spec), "seed": seed, "density": density})
        out.append((float(v), gen_plane_pair(spec)))
    return out


@dataclass(frozen=True)
class TableCase:
    name: str
    category: str
    pair: SurfacePair
    label: LabelBand


TABLE_CATEGORIES = {
    "full_overlap": (90.0, 100.0),
    "concentric_clearance": (0.0, 10.0),
    "tilt45_partial": (40.0, 60.0),
    "near_contact_partial": (40.0, 60.0),
}


def table_analog_set(seed: int = 2024) -> list[TableCase]:
    """24 held-out pairs in four categories, each posed by a random rigid motion and scale.

    Seeds are disjoint from the training plan's; the expected band of each
    case is the oracle band of its final geometry.
    """
    rng = np.random.default_rng(seed)
    cases = []

    def posed(pair):
        axis = rng.normal(size=3)
        rot = rotation_matrix(axis, float(rng.uniform(0, 360)))
        s = float(np.exp(rng.uniform(np.log(0.3), np.log(3.0))))
        t = rng.uniform(-5, 5, size=3)
        return transform_pair(pair, rot, t, s)

    def add(name, category, spec):
        pair = posed(generate_pair(spec))
        cases.append(TableCase(name, category, pair, oracle_label(compute_features(pair))))

    def sd():
        return int(rng.integers(2 ** 31))

    for i in range(5):
        add(f"full_plane_{i}", "full_overlap", PairSpec(seed=sd()))
    for i, h in enumerate((0.6, 0.8, 1.0)):
        add(f"full_cyl_{i}", "full_overlap",
            PairSpec(family="concentric_cylinders", height=h, seed=sd()))
    for i, (g, h) in enumerate(itertools.product((0.2, 0.25, 0.3, 0.35), (0.6, 1.0))):
        add(f"clearance_cyl_{i}", "concentric_clearance",
            PairSpec(family="concentric_cylinders", gap=g * 0.5, height=h, seed=sd()))
    for i, off in enumerate((0.0, 0.1, 0.2, 0.3)):
        add(f"tilt45_{i}", "tilt45_partial",
            PairSpec(angle_deg=45.0, lateral_offset=(off, 0.0, 0.0), seed=sd()))
    for i, (g, off) in enumerate(((0.01, 0.45), (0.005, 0.5), (0.01, 0.55), (0.005, 0.6))):
        add(f"near_{i}", "near_contact_partial",
            PairSpec(gap=g, lateral_offset=(off, 0.0, 0.0), seed=sd()))
    return cases
