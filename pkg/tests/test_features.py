import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contact_quality.errors import DegenerateGeometryError
from contact_quality.features import (
    BANDS, ContactFeatures, LabelMargins, OracleThresholds, compute_features, feature_report,
    fitted_plane_normal, inter_surface_angle, label_is_stable, min_gap, min_gap_brute,
    min_gap_points, oracle_label, projected_overlap,
)
from contact_quality.geometry import LabeledPointSet, SurfacePair, rotation_matrix, transform_pair


def lattice(n=11, z=0.0, side=1.0, offset=(0.0, 0.0)):
    u = np.linspace(0, side, n)
    xx, yy = np.meshgrid(u + offset[0], u + offset[1], indexing="ij")
    return np.c_[xx.ravel(), yy.ravel(), np.full(n * n, z)]


def brute_min_gap(a, b):
    return min(math.dist(p, q) for p in a for q in b)


# ---- min gap


def test_coincident_squares_gap_zero():
    assert min_gap(SurfacePair.from_arrays(lattice(), lattice())) <= 1e-12


def test_parallel_squares_gap():
    pair = SurfacePair.from_arrays(lattice(), lattice(z=0.5))
    assert min_gap(pair) == pytest.approx(0.5, abs=1e-15)
    assert min_gap(pair) == brute_min_gap(lattice(), lattice(z=0.5))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_grid_hash_equals_brute_force(seed):
    rng = np.random.default_rng(seed)
    na, nb = rng.integers(1, 500, size=2)
    spread = rng.uniform(1e-3, 1e3)
    a = rng.normal(size=(na, 3)) * spread
    b = rng.normal(size=(nb, 3)) * spread * rng.uniform(0.1, 3) + rng.normal(size=3) * spread * 2
    assert min_gap_points(a, b) == min_gap_brute(a, b)


def test_grid_hash_on_flat_and_clustered_sets():
    rng = np.random.default_rng(3)
    a = np.c_[rng.random((500, 2)), np.zeros(500)]
    b = np.c_[rng.random((500, 2)), np.full(500, 1e-3)]
    assert min_gap_points(a, b) == min_gap_brute(a, b)
    c = np.concatenate([rng.normal(size=(250, 3)) * 1e-6, rng.normal(size=(250, 3)) + 50])
    assert min_gap_points(c, b) == min_gap_brute(c, b)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_min_gap_symmetric_and_rigid_invariant(seed):
    rng = np.random.default_rng(seed)
    pair = SurfacePair.from_arrays(rng.random((80, 3)), rng.random((60, 3)) + [0, 0, 0.3])
    g = min_gap(pair)
    assert min_gap(pair.swapped()) == g
    moved = transform_pair(pair, rotation_matrix(rng.normal(size=3), rng.uniform(0, 360)),
                           rng.normal(size=3) * 10)
    assert min_gap(moved) == pytest.approx(g, abs=1e-9)


# ---- plane fit and angle


def test_normal_of_horizontal_plane():
    np.testing.assert_allclose(fitted_plane_normal(lattice()), [0, 0, 1], atol=1e-12)


def test_normal_of_vertical_plane_x_eq_y():
    rng = np.random.default_rng(0)
    t, z = rng.random(50), rng.random(50)
    n = fitted_plane_normal(np.c_[t, t, z])
    np.testing.assert_allclose(n, np.array([1, -1, 0]) / math.sqrt(2), atol=1e-12)


@pytest.mark.parametrize("pts", [
    [[0, 0, 0], [1, 1, 1]],
    [[0, 0, 0], [1, 1, 1], [2, 2, 2], [3, 3, 3]],
    [[1, 2, 3]] * 5,
])
def test_degenerate_plane_fit(pts):
    with pytest.raises(DegenerateGeometryError):
        fitted_plane_normal(np.array(pts, dtype=float))


def test_angle_examples():
    flat = lattice()
    assert inter_surface_angle(SurfacePair.from_arrays(flat, lattice(z=0.3))) == pytest.approx(0, abs=1e-9)
    vertical = flat[:, [0, 2, 1]]
    assert inter_surface_angle(SurfacePair.from_arrays(flat, vertical)) == pytest.approx(90, abs=1e-9)
    tilted = flat @ rotation_matrix("x", 45).T
    assert inter_surface_angle(SurfacePair.from_arrays(flat, tilted)) == pytest.approx(45, abs=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_angle_range_and_swap(seed):
    rng = np.random.default_rng(seed)
    pair = SurfacePair.from_arrays(rng.normal(size=(30, 3)), rng.normal(size=(30, 3)))
    ang = inter_surface_angle(pair)
    assert 0 <= ang <= 90
    assert inter_surface_angle(pair.swapped()) == pytest.approx(ang, abs=1e-9)


# ---- overlap


def brute_overlap_half_square(n=81):
    # both lattices share the raster basis, so count cells directly
    a = lattice(n)
    b = lattice(n, side=0.5, offset=(0.25, 0.25))
    occ_a = {tuple(np.minimum((p[:2] * 32).astype(int), 31)) for p in a}
    occ_b = {tuple(np.minimum((p[:2] * 32).astype(int), 31)) for p in b}
    return len(occ_a & occ_b) / len(occ_a)


def test_overlap_identical_squares():
    assert projected_overlap(SurfacePair.from_arrays(lattice(40), lattice(40))) == 1.0


def test_overlap_half_side_square():
    pair = SurfacePair.from_arrays(lattice(81), lattice(81, side=0.5, offset=(0.25, 0.25)))
    got = projected_overlap(pair)
    assert got == pytest.approx(brute_overlap_half_square())
    assert abs(got - 0.25) <= 2 * 32 / 32 ** 2  # one raster row/column each way


def test_overlap_disjoint():
    pair = SurfacePair.from_arrays(lattice(20), lattice(20, offset=(3.0, 0.0)))
    assert projected_overlap(pair) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_overlap_bounds_and_superset(seed):
    rng = np.random.default_rng(seed)
    a = np.c_[rng.random((200, 2)), rng.normal(size=200) * 1e-3]
    b = np.concatenate([a, rng.normal(size=(50, 3))])
    assert projected_overlap(SurfacePair.from_arrays(a, b)) == 1.0
    other = SurfacePair.from_arrays(a, rng.normal(size=(100, 3)))
    assert 0.0 <= projected_overlap(other) <= 1.0


# ---- oracle


@pytest.mark.parametrize("g, ang, ov, cls, band", [
    (0.0, 0.0, 1.0, 1, (90, 100)),
    (0.5, 0.0, 1.0, 2, (0, 10)),
    (0.01, 45.0, 0.3, 3, (40, 60)),
])
def test_oracle_examples(g, ang, ov, cls, band):
    lb = oracle_label(ContactFeatures(g, g, ang, ov, ov))
    assert lb.class_label == cls and lb.band == band


def test_oracle_rule_order_bad_wins():
    # a perfect-looking pair whose overlap is tiny is still bad
    assert oracle_label(ContactFeatures(0, 0, 0, 0.04, 1.0)).class_label == 2
    th = OracleThresholds(use_max_overlap=True)
    assert oracle_label(ContactFeatures(0, 0, 0, 0.04, 1.0), th).class_label == 1


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 2), st.floats(0, 90), st.floats(0, 1))
def test_oracle_is_total_and_bands_match(g, ang, ov):
    lb = oracle_label(ContactFeatures(g, g, ang, ov, ov))
    assert lb.class_label in (1, 2, 3)
    assert lb.band == BANDS[lb.class_label]
    lo, hi = lb.band
    assert 0 <= lo <= hi <= 100


def test_parallel_gap_half_is_bad():
    pair = SurfacePair.from_arrays(lattice(21), lattice(21, z=0.5))
    f = compute_features(pair)
    assert f.gap_rel == pytest.approx(0.5 / math.sqrt(2.25), rel=1e-5)
    assert oracle_label(f).class_label == 2


def test_feature_report_keys():
    f = compute_features(SurfacePair.from_arrays(lattice(), lattice()))
    rep = feature_report(f, oracle_label(f))
    assert set(rep) == {"gap", "gap_rel", "angle_deg", "overlap_ab", "overlap_ba", "class", "band"}
    assert rep["class"] == 1 and rep["band"] == [90.0, 100.0]


# ---- label stability


def test_stability_far_from_thresholds():
    assert label_is_stable(ContactFeatures(0, 0.0, 0.0, 1.0, 1.0))
    assert label_is_stable(ContactFeatures(1, 0.4, 30.0, 0.5, 0.5))


@pytest.mark.parametrize("f", [
    ContactFeatures(0, 0.025, 0.0, 1.0, 1.0),  # gap near the good limit
    ContactFeatures(0, 0.0, 8.0, 1.0, 1.0),  # angle near the good limit
    ContactFeatures(0, 0.0, 0.0, 0.72, 0.72),  # overlap near the good limit
    ContactFeatures(0, 0.14, 30.0, 0.5, 0.5),  # gap near the bad limit
    ContactFeatures(0, 0.05, 30.0, 0.055, 0.055),  # overlap near the bad limit
])
def test_stability_near_thresholds(f):
    assert not label_is_stable(f)


def test_stability_ignores_irrelevant_threshold():
    # angle sits at the good limit, but a big gap decides the label anyway
    assert label_is_stable(ContactFeatures(0, 0.5, 10.0, 1.0, 1.0))
    assert label_is_stable(ContactFeatures(0, 0.0, 10.0, 0.5, 0.5), margins=LabelMargins())


def test_features_on_point_sets_are_finite():
    a = LabeledPointSet(lattice(), 1)
    b = LabeledPointSet(lattice(z=0.1) @ rotation_matrix("y", 20).T, 2)
    f = compute_features(SurfacePair(a, b))
    assert all(np.isfinite([f.gap, f.gap_rel, f.angle_deg, f.overlap_ab, f.overlap_ba]))
