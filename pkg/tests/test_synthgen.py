import math
from dataclasses import replace

import numpy as np
import pytest

from contact_quality.activation import bin_points, padded_bounds
from contact_quality.errors import GenerationError
from contact_quality.features import (
    BAD, GOOD, NEUTRAL, compute_features, inter_surface_angle, label_is_stable, oracle_label,
)
from contact_quality.synthgen import (
    GenerationPlan, PairSpec, augment_rotations, build_dataset, gen_concentric_cylinders,
    gen_plane_pair, load_entry_pairs, make_sample, read_manifest, rotate_pair, split_dataset,
    sweep_pairs, table_analog_set,
)


@pytest.fixture(scope="module")
def default_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    return build_dataset(seed=0, out_dir=out), out


# ---- pair generators


def test_coincident_squares_are_good():
    pair = gen_plane_pair(PairSpec())
    assert oracle_label(compute_features(pair)).class_label == GOOD


def test_perpendicular_squares_angle():
    assert inter_surface_angle(gen_plane_pair(PairSpec(angle_deg=90))) == pytest.approx(90, abs=1e-6)


def test_lifted_square_is_bad():
    f = compute_features(gen_plane_pair(PairSpec(gap=0.5)))
    assert f.gap_rel == pytest.approx(0.5 / math.sqrt(2.25), rel=2e-2)  # jitter trims the box
    assert oracle_label(f).class_label == BAD


def test_plane_pair_deterministic_and_seeded():
    a, b = gen_plane_pair(PairSpec(seed=4)), gen_plane_pair(PairSpec(seed=4))
    np.testing.assert_array_equal(a.side_a.points, b.side_a.points)
    c = gen_plane_pair(PairSpec(seed=5))
    assert not np.array_equal(a.side_a.points, c.side_a.points)


def test_plane_pair_density():
    pair = gen_plane_pair(PairSpec(scale_b=0.5, density=400))
    assert len(pair.side_a) == pytest.approx(400, rel=0.1)
    assert len(pair.side_b) == pytest.approx(100, rel=0.2)


@pytest.mark.parametrize("kw", [dict(density=0), dict(scale_b=-1), dict(family="cone")])
def test_invalid_spec(kw):
    with pytest.raises(ValueError):
        PairSpec(**kw)


def test_cylinder_clearance_is_bad():
    r = 0.5
    pair = gen_concentric_cylinders(PairSpec(family="concentric_cylinders", gap=0.3 * r, radius=r))
    f = compute_features(pair)
    assert f.gap == pytest.approx(0.3 * r, rel=0.05)
    lb = oracle_label(f)
    assert lb.class_label == BAD and lb.band == (0.0, 10.0)


def test_touching_cylinders_are_good():
    f = compute_features(gen_concentric_cylinders(PairSpec(family="concentric_cylinders")))
    assert oracle_label(f).class_label == GOOD


def test_cylinder_points_scale_with_height():
    counts = [len(gen_concentric_cylinders(
        PairSpec(family="concentric_cylinders", height=h, density=1000)).side_a) for h in (0.5, 1.0, 2.0)]
    np.testing.assert_allclose(np.array(counts) / counts[0], [1, 2, 4], rtol=0.05)


# ---- augmentation


def test_augment_zero_is_empty():
    assert augment_rotations(make_sample("x", PairSpec()), 0, seed=0) == []


def test_augment_copies_label_and_provenance():
    s = make_sample("x", PairSpec(angle_deg=30, gap=0.1))
    aug = augment_rotations(s, 3, seed=1)
    assert [a.id for a in aug] == ["x_r0", "x_r1", "x_r2"]
    assert all(a.label == s.label and a.band == s.band and a.augmentation_of == "x" for a in aug)
    assert augment_rotations(s, 3, seed=1)[2].rotation == aug[2].rotation


@pytest.mark.parametrize("axis, plane", [("x", (1, 2)), ("y", (2, 0)), ("z", (0, 1))])
def test_quarter_turn_augmentation_permutes_grid(axis, plane):
    pair = gen_plane_pair(PairSpec(gap=0.1, angle_deg=30, lateral_offset=(0.2, 0.1, 0)))
    turned = rotate_pair(pair, axis, 90)
    for r in (8, 16):
        g0 = bin_points(pair, r, padded_bounds(pair))
        g1 = bin_points(turned, r, padded_bounds(turned))
        np.testing.assert_array_equal(g1.states, np.rot90(g0.states, 1, axes=plane))


# ---- split


def test_split_tiny_example():
    out = split_dataset({"a": 1, "b": 1, "c": 2, "d": 2}, 0.5)
    assert sorted(out.values()) == ["train", "train", "validation", "validation"]
    assert {out["a"], out["b"]} == {"train", "validation"}


def test_split_rejects_singleton_class_and_bad_fraction():
    with pytest.raises(GenerationError):
        split_dataset({"a": 1, "b": 1, "c": 2})
    with pytest.raises(ValueError):
        split_dataset({"a": 1, "b": 1}, 1.0)


def test_split_fraction_rounding():
    rng = np.random.default_rng(0)
    labels = {f"s{i}": int(rng.integers(1, 4)) for i in range(300)}
    out = split_dataset(labels, 0.75, seed=3)
    assert sum(v == "train" for v in out.values()) == 225


# ---- dataset


def test_default_plan_counts(default_dataset):
    manifest, _ = default_dataset
    base = [e for e in manifest.entries if e["augmentation_of"] is None]
    assert len(base) == 300
    assert len(manifest.entries) == 300 * 5
    assert {e["label"] for e in base} == {GOOD, BAD, NEUTRAL}


def test_default_split_sizes_and_no_leakage(default_dataset):
    manifest, _ = default_dataset
    base_split = {e["id"]: e["split"] for e in manifest.entries if e["augmentation_of"] is None}
    assert sum(v == "train" for v in base_split.values()) == 225
    for e in manifest.entries:
        if e["augmentation_of"] is not None:
            assert e["split"] == base_split[e["augmentation_of"]]
    train_labels = {e["label"] for e in manifest.entries if e["split"] == "train"}
    assert train_labels == {GOOD, BAD, NEUTRAL}


def test_default_samples_are_label_stable(default_dataset):
    manifest, _ = default_dataset
    base = [s for s in manifest.samples if s.augmentation_of is None]
    assert all(label_is_stable(s.features) for s in base)


def test_stored_labels_reproduce_from_disk(default_dataset):
    _, out = default_dataset
    entries, root = read_manifest(out)
    # every base sample plus every 7th augmented copy
    picked = [e for i, e in enumerate(entries) if e["augmentation_of"] is None or i % 7 == 0]
    for e, pair in zip(picked, load_entry_pairs(picked, root)):
        lb = oracle_label(compute_features(pair))
        assert lb.class_label == e["label"], e["id"]
        assert list(lb.band) == e["band"]


def test_manifest_schema(default_dataset):
    manifest, out = default_dataset
    keys = {"id", "points_path", "family", "params", "label", "band", "split", "augmentation_of"}
    assert all(set(e) == keys for e in manifest.entries)
    assert all((out / e["points_path"]).is_file() for e in manifest.entries[:50])


def test_same_seed_byte_identical_manifest(default_dataset, tmp_path):
    _, out = default_dataset
    plan = GenerationPlan()
    build_dataset(plan, seed=0, out_dir=tmp_path)
    assert (tmp_path / "manifest.json").read_bytes() == (out / "manifest.json").read_bytes()
    for name in ("s0000.csv", "s0150.csv", "s0299.csv"):
        assert (tmp_path / "points" / name).read_bytes() == (out / "points" / name).read_bytes()


def test_far_only_plan_has_no_good_class():
    plan = replace(GenerationPlan(), plane_blocks=(((0.5, 0.6), (0.0, 30.0), (1.0,), (0.0,), (0.0,)),),
                   cylinder_blocks=(), n_base=None, margins=None, augment=0)
    with pytest.raises(GenerationError, match="class 1 empty"):
        build_dataset(plan)


def test_plan_too_small_for_request():
    plan = replace(GenerationPlan(), cylinder_blocks=(), n_base=400, augment=0)
    with pytest.raises(GenerationError, match="label-stable"):
        build_dataset(plan)


# ---- evaluation geometries


@pytest.mark.parametrize("kind, n, first, last", [
    ("translate", 8, 0.0, 0.6), ("rotate", 7, 0.0, 90.0), ("scale", 4, 1.0, 0.25),
])
def test_sweep_grids(kind, n, first, last):
    pairs = sweep_pairs(kind)
    vals = [v for v, _ in pairs]
    assert len(vals) == n and vals[0] == first and vals[-1] == pytest.approx(last)


def test_sweep_unknown_kind():
    with pytest.raises(ValueError):
        sweep_pairs("shear")


def test_table_analog_bands():
    cases = table_analog_set()
    assert len(cases) == 24
    expected = {"full_overlap": (90, 100), "concentric_clearance": (0, 10),
                "tilt45_partial": (40, 60), "near_contact_partial": (40, 60)}
    for c in cases:
        assert c.label.band == expected[c.category], c.name


def test_augmentation_redraws_label_changing_rotations():
    # a right-angle crossing sits close to the overlap limit in some orientations
    s = make_sample("x", PairSpec(angle_deg=90))
    aug = augment_rotations(s, 6, seed=0)
    for a in aug:
        assert oracle_label(compute_features(a.pair)).class_label == s.label
