"""Property-based checks of the invariants each module guarantees."""

import colorsys
import math

import numpy as np
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import grid_incircle
from vendsynth.assets import box_mesh, cylinder_mesh
from vendsynth.camera import FisheyeDistortion, PinholeIntrinsics, check_monotonic, distort, undistort
from vendsynth.deform import deform, energy, procrustes_rotations, select_deformation_region, solve
from vendsynth.geometry import AABB, Disc, Pose, Rect, TriMesh, compute_aabb, footprint_excircle, pose_rotation
from vendsynth.labeler import mask_bbox
from vendsynth.layout import LayoutItem, PlaneFullError, PlaneRegion, clearance, max_inscribed_circle, place_objects
from vendsynth.pipeline import normalize
from vendsynth.transfer import MaskPair, hue_difference, rgb_to_hsv, segment_foreground

SLOW = settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
INTR = PinholeIntrinsics(300.0, 300.0, 499.5, 499.5, 1000, 1000)

unit = st.floats(0.0, 1.0, allow_nan=False)
coeff = st.floats(-0.05, 0.05, allow_nan=False)
seeds = st.integers(0, 2**32 - 1)


# geometry

@given(st.tuples(*[st.floats(-5, 5)] * 3), st.tuples(*[st.floats(0.01, 2)] * 3), st.sampled_from(list(Pose)),
       st.tuples(*[st.floats(-10, 10)] * 3))
def test_excircle_translation_invariant_and_contains_corners(lo, size, pose, shift):
    box = AABB(lo, np.add(lo, size))
    moved = AABB(np.add(lo, shift), np.add(np.add(lo, size), shift))
    d = footprint_excircle(box, pose)
    assert math.isclose(d.radius, footprint_excircle(moved, pose).radius, rel_tol=1e-9)
    corners = np.array([[x, y, z] for x in (box.min[0], box.max[0]) for y in (box.min[1], box.max[1])
                        for z in (box.min[2], box.max[2])]) @ pose_rotation(pose).T
    dist = np.hypot(corners[:, 0] - d.center[0], corners[:, 2] - d.center[1])
    assert dist.max() <= d.radius + 1e-12


@given(arrays(np.float64, st.tuples(st.integers(3, 40), st.just(3)), elements=st.floats(-100, 100)))
def test_aabb_equals_brute_force_scan(v):
    v = np.vstack([[[0, 0, 0], [1, 0, 0], [0, 1, 0]], v])  # one non-degenerate triangle
    m = TriMesh(v, [[0, 1, 2]], np.zeros((len(v), 2)))
    lo = [min(row[k] for row in v) for k in range(3)]
    hi = [max(row[k] for row in v) for k in range(3)]
    box = compute_aabb(m)
    assert list(box.min) == lo and list(box.max) == hi


# deform

@SLOW
@given(seeds, st.integers(1, 3), st.booleans())
def test_zero_magnitude_is_identity(seed, handles, use_box):
    m = box_mesh((0.06, 0.1, 0.05)) if use_box else cylinder_mesh(0.03, 0.1, segments=12, rings=3)
    spec = select_deformation_region(m, np.random.default_rng(seed), handles, 1, 0.0)
    np.testing.assert_allclose(deform(m, spec).vertices, m.vertices, atol=1e-12)


@SLOW
@given(seeds, st.floats(0.0, 1.0))
def test_solver_does_not_raise_energy(seed, lam):
    m = cylinder_mesh(0.03, 0.1, segments=10, rings=3)
    spec = select_deformation_region(m, np.random.default_rng(seed), 2, 2, 0.006, rigidity=lam)
    res = solve(m, spec, max_iters=30)
    assert energy(m, res.mesh.vertices, spec) <= energy(m, m.vertices, spec) + 1e-10
    assert np.all(np.diff(res.energies) <= 1e-10)


@given(arrays(np.float64, (8, 3, 3), elements=st.floats(-10, 10)))
def test_procrustes_rotations_are_proper(cov):
    r = procrustes_rotations(cov)
    np.testing.assert_allclose(np.swapaxes(r, 1, 2) @ r, np.broadcast_to(np.eye(3), r.shape), atol=1e-9)
    np.testing.assert_allclose(np.linalg.det(r), 1.0, atol=1e-9)


# layout

def _items(radii):
    return [LayoutItem(str(k), {Pose.STANDING: Disc((0, 0), r), Pose.LYING_Z: Disc((0, 0), 1.2 * r)})
            for k, r in enumerate(radii)]


@settings(max_examples=100, deadline=None)
@given(seeds, st.lists(st.floats(0.04, 0.12), min_size=1, max_size=5), st.floats(0.0, 0.9))
def test_layouts_valid_and_free_area_decreasing(seed, radii, keep):
    plane = Rect(-0.3, -0.225, 0.3, 0.225)
    pl = place_objects(_items(radii), plane, np.random.default_rng(seed), keep_probability=keep, grid=60)
    region = PlaneRegion(plane)
    area = region.free_area()
    for k, p in enumerate(pl):
        (x, z), r = p.disc.center, p.disc.radius
        assert plane.xmin - 1e-9 <= x - r and x + r <= plane.xmax + 1e-9
        assert plane.zmin - 1e-9 <= z - r and z + r <= plane.zmax + 1e-9
        for q in pl[:k]:
            assert math.dist(p.disc.center, q.disc.center) - r - q.disc.radius >= -1e-9
        region = region.with_obstacle(p.disc)
        assert region.free_area() < area
        area = region.free_area()
    again = place_objects(_items(radii), plane, np.random.default_rng(seed), keep_probability=keep, grid=60)
    assert again == pl


@SLOW
@given(st.lists(st.tuples(st.floats(-0.3, 0.3), st.floats(-0.225, 0.225), st.floats(0.005, 0.1)), max_size=10))
def test_incircle_matches_fine_grid_oracle(obstacles):
    plane = Rect(-0.3, -0.225, 0.3, 0.225)
    region = PlaneRegion(plane, tuple(Disc((x, z), r) for x, z, r in obstacles))
    c, r = region.obstacle_arrays()
    best = grid_incircle(plane, c, r, step=1e-3)
    try:
        d = max_inscribed_circle(region)
    except PlaneFullError:
        assert best <= 2e-3
        return
    assert abs(d.radius - best) <= 2e-3
    assert clearance(region, d.center) >= d.radius - 1e-9


# camera

@given(coeff, coeff, coeff, coeff)
def test_principal_ray_maps_to_principal_point(k1, k2, k3, k4):
    p = distort(np.array([0.0, 0.0, 1.0]), INTR, FisheyeDistortion(k1, k2, k3, k4))
    np.testing.assert_array_equal(p, [INTR.cx, INTR.cy])


@given(st.floats(0.0, math.radians(70)), st.floats(0, 2 * math.pi), st.floats(0, 2 * math.pi), coeff, coeff)
def test_radial_symmetry(theta, phi, spin, k1, k2):
    dist = FisheyeDistortion(k1, k2)
    d = np.array([math.tan(theta) * math.cos(phi), math.tan(theta) * math.sin(phi), 1.0])
    c, s = math.cos(spin), math.sin(spin)
    rot = np.array([c * d[0] - s * d[1], s * d[0] + c * d[1], 1.0])
    u = (distort(d, INTR, dist) - [INTR.cx, INTR.cy]) / INTR.fx
    v = (distort(rot, INTR, dist) - [INTR.cx, INTR.cy]) / INTR.fx
    np.testing.assert_allclose(v, [c * u[0] - s * u[1], s * u[0] + c * u[1]], atol=1e-10)


@given(st.floats(0.0, math.radians(74)), st.floats(0, 2 * math.pi), coeff, coeff, coeff, coeff)
def test_undistort_inverts_distort(theta, phi, k1, k2, k3, k4):
    dist = FisheyeDistortion(k1, k2, k3, k4)
    try:
        check_monotonic(dist, math.radians(75))
    except ValueError:
        assume(False)
    ab = np.array([math.tan(theta) * math.cos(phi), math.tan(theta) * math.sin(phi)])
    back = undistort(distort(np.r_[ab, 1.0], INTR, dist), INTR, dist, theta_max=math.radians(75))
    np.testing.assert_allclose(back, ab, atol=1e-8 * max(1.0, float(np.hypot(*ab))))


# labeler

@given(arrays(np.bool_, st.tuples(st.integers(1, 20), st.integers(1, 20))), st.integers(1, 30))
def test_bbox_is_tight(mask, min_pixels):
    box = mask_bbox(mask, min_pixels)
    if mask.sum() < min_pixels:
        assert box is None
        return
    ys, xs = np.nonzero(mask)
    assert (box.x, box.y) == (xs.min(), ys.min())
    assert (box.x + box.w - 1, box.y + box.h - 1) == (xs.max(), ys.max())


# transfer

@given(st.tuples(unit, unit, unit))
def test_hsv_matches_colorsys(rgb):
    np.testing.assert_allclose(rgb_to_hsv(np.array(rgb)), colorsys.rgb_to_hsv(*rgb), atol=1e-12)


@given(unit, unit)
def test_hue_difference_wraps(a, b):
    d = float(hue_difference(a, b))
    assert -0.5 <= d <= 0.5
    assert math.isclose((d - (a - b)) % 1.0, 0.0, abs_tol=1e-12) or math.isclose((d - (a - b)) % 1.0, 1.0, abs_tol=1e-12)


@given(arrays(np.float64, (6, 7, 3), elements=unit), arrays(np.float64, (6, 7, 3), elements=unit),
       st.floats(0.0, 0.5))
def test_segmentation_is_a_partition(img, clean, threshold):
    m = segment_foreground(img, clean, threshold)
    assert isinstance(m, MaskPair)
    assert not np.any(m.fg & m.bg) and np.all(m.fg | m.bg)


# pipeline

@given(st.recursive(st.floats(-1e6, 1e6) | st.integers() | st.text(max_size=3),
                    lambda c: st.lists(c, max_size=3) | st.dictionaries(st.text(max_size=3), c, max_size=3),
                    max_leaves=10))
def test_normalize_is_idempotent(obj):
    once = normalize(obj)
    assert normalize(once) == once
