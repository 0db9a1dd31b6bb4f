import math

import numpy as np
import pytest

from oracles import grid_incircle
from vendsynth.geometry import Disc, Pose, Rect
from vendsynth.layout import (
    LayoutItem,
    PlaneFullError,
    PlaneRegion,
    clearance,
    clearance_field,
    max_inscribed_circle,
    place_objects,
    sample_pose,
)


def items(radii):
    return [LayoutItem(f"obj{k}", {Pose.STANDING: Disc((0, 0), r), Pose.LYING_X: Disc((0, 0), 1.3 * r)})
            for k, r in enumerate(radii)]


def test_unit_square_incircle():
    d = max_inscribed_circle(PlaneRegion(Rect(0, 0, 1, 1)))
    assert d.radius == pytest.approx(0.5, abs=1e-6)
    assert d.center == pytest.approx((0.5, 0.5), abs=1e-5)


def test_flat_maximum_prefers_smallest_x():
    d = max_inscribed_circle(PlaneRegion(Rect(0, 0, 2, 1)))
    assert d.radius == pytest.approx(0.5, abs=1e-6)
    assert d.center[0] == pytest.approx(0.5, abs=1e-5)


def test_obstacle_case_against_grid_oracle():
    region = PlaneRegion(Rect(0, 0, 0.6, 0.45), (Disc((0.2, 0.2), 0.1), Disc((0.45, 0.3), 0.08)))
    d = max_inscribed_circle(region)
    c, r = region.obstacle_arrays()
    assert abs(d.radius - grid_incircle(region.boundary, c, r)) <= 2e-3
    assert clearance(region, d.center) == pytest.approx(d.radius, abs=1e-9)


def test_full_plane_raises():
    region = PlaneRegion(Rect(0, 0, 1, 1), (Disc((0.5, 0.5), 0.8),))
    with pytest.raises(PlaneFullError):
        max_inscribed_circle(region)


def test_clearance_sign_and_field():
    region = PlaneRegion(Rect(0, 0, 1, 1), (Disc((0.5, 0.5), 0.2),))
    assert clearance(region, (0.5, 0.5)) == pytest.approx(-0.2)
    assert clearance(region, (0.05, 0.5)) == pytest.approx(0.05)
    f = clearance_field(region, np.linspace(0, 1, 5), np.linspace(0, 1, 3))
    assert f.shape == (3, 5)


def test_free_area():
    region = PlaneRegion(Rect(0, 0, 1, 1)).with_obstacle(Disc((0.5, 0.5), 0.1))
    assert region.free_area() == pytest.approx(1 - math.pi * 0.01)


def assert_valid(placements, plane):
    discs = [p.disc for p in placements]
    for d in discs:
        (x, z), r = d.center, d.radius
        assert x - r >= plane.xmin - 1e-9 and x + r <= plane.xmax + 1e-9
        assert z - r >= plane.zmin - 1e-9 and z + r <= plane.zmax + 1e-9
    for i in range(len(discs)):
        for j in range(i):
            gap = math.dist(discs[i].center, discs[j].center) - discs[i].radius - discs[j].radius
            assert gap >= -1e-9


@pytest.mark.parametrize("seed", range(10))
def test_layouts_are_valid(seed):
    plane = Rect(-0.3, -0.2, 0.3, 0.2)
    pl = place_objects(items([0.04, 0.06, 0.05]), plane, np.random.default_rng(seed))
    assert_valid(pl, plane)
    for p in pl:
        assert 0 <= p.rotation_y < 2 * math.pi


def test_keep_probability_extremes():
    plane = Rect(0, 0, 0.5, 0.5)
    assert place_objects(items([0.05]), plane, np.random.default_rng(0), keep_probability=0.0) == []
    full = place_objects(items([0.05]), plane, np.random.default_rng(0), keep_probability=1.0)
    assert len(full) > 5
    with pytest.raises(ValueError):
        place_objects(items([0.05]), plane, np.random.default_rng(0), keep_probability=1.5)


def test_max_instances_per_type():
    pl = place_objects(items([0.02, 0.03]), Rect(0, 0, 1, 1), np.random.default_rng(1),
                       keep_probability=1.0, max_instances_per_type=2)
    ids = [p.object_id for p in pl]
    assert all(ids.count(i) <= 2 for i in set(ids))


def test_too_large_object_never_placed():
    pl = place_objects(items([0.6]), Rect(0, 0, 1, 1), np.random.default_rng(0), keep_probability=1.0)
    assert pl == []


def test_determinism():
    a = place_objects(items([0.04, 0.05]), Rect(0, 0, 0.6, 0.4), np.random.default_rng(9))
    b = place_objects(items([0.04, 0.05]), Rect(0, 0, 0.6, 0.4), np.random.default_rng(9))
    assert a == b


def test_pose_sampling_frequencies():
    item = LayoutItem("x", {Pose.STANDING: Disc((0, 0), 1), Pose.LYING_X: Disc((0, 0), 1), Pose.LYING_Z: Disc((0, 0), 1)})
    rng = np.random.default_rng(0)
    poses = [sample_pose(item, rng, 0.5) for _ in range(4000)]
    frac = poses.count(Pose.STANDING) / len(poses)
    assert abs(frac - 0.5) < 0.03
    only = LayoutItem("y", {Pose.LYING_Z: Disc((0, 0), 1)})
    assert sample_pose(only, rng) is Pose.LYING_Z
