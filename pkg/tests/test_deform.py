import numpy as np
import pytest

from oracles import arap_oracle
from vendsynth.assets import box_mesh, cylinder_mesh, grid_mesh
from vendsynth.deform import (
    RIGID_LAMBDA,
    SOFT_LAMBDA,
    DeformationError,
    DeformationSpec,
    energy,
    procrustes_rotations,
    select_deformation_region,
    solve,
)
from vendsynth.geometry import one_ring, weld

CENTRE = 12  # middle vertex of the 5x5 grid
RING = np.array([6, 7, 8, 11, 13, 16, 17, 18])


def grid_spec(lam=1.0, lift=0.03):
    m = grid_mesh(5, 5, 0.1)
    h = np.array([CENTRE])
    fixed = np.setdiff1d(np.arange(25), np.r_[h, RING])
    spec = DeformationSpec(h, m.vertices[h] + [0.0, lift, 0.0], RING, fixed, np.full(25, lam))
    return m, spec


def test_rigid_grid_matches_independent_arap_oracle():
    m, spec = grid_spec(lam=1.0)
    res = solve(m, spec, max_iters=20000, tol=0.0)
    nbrs = one_ring(25, m.triangles)
    edges = [(i, int(j)) for i in range(25) for j in nbrs[i]]
    ref = arap_oracle(m.vertices, edges, {CENTRE: spec.targets[0]}, set(spec.fixed.tolist()))
    np.testing.assert_allclose(res.mesh.vertices, ref, atol=1e-6)


def test_energy_never_increases():
    m, spec = grid_spec(lam=0.6)
    res = solve(m, spec, max_iters=200, tol=0.0)
    assert np.all(np.diff(res.energies) <= 1e-10)
    assert res.energies[-1] < res.energies[0]


def test_fixed_vertices_are_bit_identical():
    m, spec = grid_spec()
    out = solve(m, spec).mesh
    np.testing.assert_array_equal(out.vertices[spec.fixed], m.vertices[spec.fixed])


def test_identity_targets_give_zero_energy():
    m = grid_mesh(5, 5, 0.1)
    h = np.array([CENTRE])
    fixed = np.setdiff1d(np.arange(25), np.r_[h, RING])
    spec = DeformationSpec(h, m.vertices[h], RING, fixed, np.full(25, RIGID_LAMBDA))
    res = solve(m, spec)
    assert res.energies[-1] < 1e-12
    np.testing.assert_allclose(res.mesh.vertices, m.vertices, atol=1e-12)


def test_handle_only_mesh_snaps_to_targets():
    m = grid_mesh(2, 2, 1.0)
    t = m.vertices + 0.25
    spec = DeformationSpec(np.arange(4), t, [], [], np.full(4, 0.5))
    out = solve(m, spec).mesh
    np.testing.assert_allclose(out.vertices, t, atol=1e-12)


def test_public_energy_agrees_with_solver_trace():
    m, spec = grid_spec(lam=0.5)
    res = solve(m, spec)
    assert energy(m, res.mesh.vertices, spec) == pytest.approx(res.energies[-1], rel=1e-9, abs=1e-15)
    assert energy(m, m.vertices, spec) == pytest.approx(res.energies[0], rel=1e-12)


def test_handle_moves_towards_target_and_softness_matters():
    m, rigid = grid_spec(lam=RIGID_LAMBDA)
    _, soft = grid_spec(lam=SOFT_LAMBDA)
    a, b = solve(m, rigid).mesh, solve(m, soft).mesh
    assert a.vertices[CENTRE, 1] > 0 and b.vertices[CENTRE, 1] > 0
    assert not np.allclose(a.vertices, b.vertices)


def test_seam_copies_stay_coincident():
    m = cylinder_mesh(0.03, 0.1, segments=12, rings=4)
    spec = select_deformation_region(m, np.random.default_rng(5), 2, 2, 0.005)
    out = solve(m, spec).mesh
    _, inverse, _ = weld(m)
    for w in np.unique(inverse):
        copies = out.vertices[inverse == w]
        assert np.all(copies == copies[0])


@pytest.mark.parametrize("seed", range(5))
def test_random_regions_partition_and_converge(seed):
    m = box_mesh((0.06, 0.1, 0.05)) if seed % 2 else cylinder_mesh(0.03, 0.1)
    rng = np.random.default_rng(seed)
    spec = select_deformation_region(m, rng, 1 + seed % 3, 1, 0.004)
    assert len(spec.handles) + len(spec.neighbors) + len(spec.fixed) == m.n_vertices
    res = solve(m, spec, max_iters=50)
    assert np.all(np.diff(res.energies) <= 1e-10)


def test_spec_validation():
    with pytest.raises(DeformationError, match="partition"):
        DeformationSpec([0], [[0, 0, 0]], [1], [1], np.ones(3))
    with pytest.raises(DeformationError, match="lambda"):
        DeformationSpec([0], [[0, 0, 0]], [], [1], [1.5, 0.5])
    with pytest.raises(DeformationError, match="one target"):
        DeformationSpec([0], np.zeros((2, 3)), [], [1], [1, 1])
    with pytest.raises(DeformationError, match="finite"):
        DeformationSpec([0], [[np.nan, 0, 0]], [], [1], [1, 1])


def test_unanchored_region_is_rejected():
    m = grid_mesh(3, 3, 1.0)
    spec = DeformationSpec([], np.zeros((0, 3)), np.arange(9), [], np.ones(9))
    with pytest.raises(DeformationError, match="singular"):
        solve(m, spec)


def test_region_selection_errors():
    m = grid_mesh(3, 3, 1.0)
    rng = np.random.default_rng(0)
    with pytest.raises(DeformationError, match="at least 1"):
        select_deformation_region(m, rng, 0, 1, 0.1)
    with pytest.raises(DeformationError, match="exceeds"):
        select_deformation_region(m, rng, 10, 1, 0.1)


def test_procrustes_returns_proper_rotations():
    rng = np.random.default_rng(3)
    r = procrustes_rotations(rng.normal(size=(200, 3, 3)))
    np.testing.assert_allclose(r @ np.transpose(r, (0, 2, 1)), np.broadcast_to(np.eye(3), r.shape), atol=1e-12)
    np.testing.assert_allclose(np.linalg.det(r), 1.0, atol=1e-12)
