"""Packing object footprints onto the holding plane.

Objects are reduced to the excircles of their footprints. Each new object is
dropped into the largest circle that still fits in the free part of the
plane; objects that no longer fit leave the candidate pool.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import Disc, Pose, Rect


class PlaneFullError(RuntimeError):
    """The free region of the plane is empty."""


@dataclass(frozen=True)
class PlaneRegion:
    boundary: Rect
    obstacles: tuple[Disc, ...] = ()

    def with_obstacle(self, disc: Disc) -> PlaneRegion:
        return PlaneRegion(self.boundary, self.obstacles + (disc,))

    def obstacle_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.obstacles:
            return np.zeros((0, 2)), np.zeros(0)
        c = np.array([d.center for d in self.obstacles])
        r = np.array([d.radius for d in self.obstacles])
        return c, r

    def free_area(self) -> float:
        """Exact free area, assuming obstacles are disjoint and inside the boundary."""
        return self.boundary.area - sum(d.area for d in self.obstacles)


@dataclass(frozen=True)
class Placement:
    object_id: str
    disc: Disc
    rotation_y: float
    pose: Pose


@dataclass(frozen=True)
class LayoutItem:
    """An object type with its footprint excircle per available pose."""

    object_id: str
    footprints: Mapping[Pose, Disc]


def _clearance_arrays(rect: Rect, centers: np.ndarray, radii: np.ndarray, px: np.ndarray, pz: np.ndarray) -> np.ndarray:
    d = np.minimum(np.minimum(px - rect.xmin, rect.xmax - px), np.minimum(pz - rect.zmin, rect.zmax - pz))
    for (cx, cz), r in zip(centers, radii):
        d = np.minimum(d, np.hypot(px - cx, pz - cz) - r)
    return d


def clearance(region: PlaneRegion, p) -> float:
    """Signed distance from ``p`` to the nearest boundary edge or obstacle circle."""
    c, r = region.obstacle_arrays()
    return float(_clearance_arrays(region.boundary, c, r, np.float64(p[0]), np.float64(p[1])))


def clearance_field(region: PlaneRegion, xs: np.ndarray, zs: np.ndarray) -> np.ndarray:
    """Clearance sampled on the grid ``xs`` x ``zs``; shape (len(zs), len(xs))."""
    c, r = region.obstacle_arrays()
    px, pz = np.meshgrid(xs, zs, indexing="xy")
    return _clearance_arrays(region.boundary, c, r, px, pz)


def max_inscribed_circle(
    region: PlaneRegion,
    grid: int = 200,
    tol: float = 1e-6,
    max_cells: int = 1024,
) -> Disc:
    """Largest disc inside the free region.

    Clearance is sampled at the centres of a ``grid`` x ``grid`` lattice over
    the boundary. Since clearance is 1-Lipschitz, a cell can only beat the
    current best if its centre value plus its half-diagonal does; such cells
    are quartered until the half-diagonal is below ``tol``. At most
    ``max_cells`` of the most promising cells are kept per round (ties go to
    smaller x, then smaller z), which also resolves flat maxima towards the
    smallest x, then smallest z.

    Raises ``PlaneFullError`` when the best clearance is not positive.
    """
    rect = region.boundary
    c, r = region.obstacle_arrays()
    hx, hz = 0.5 * rect.width / grid, 0.5 * rect.depth / grid
    xs = rect.xmin + (2 * np.arange(grid) + 1) * hx
    zs = rect.zmin + (2 * np.arange(grid) + 1) * hz
    px, pz = (a.ravel() for a in np.meshgrid(xs, zs, indexing="xy"))
    val = _clearance_arrays(rect, c, r, px, pz)

    tie = 1e-12
    best_val, best_x, best_z = -math.inf, math.inf, math.inf

    def update(vals, xs_, zs_):
        nonlocal best_val, best_x, best_z
        if not len(vals):
            return
        top = vals.max()
        if top > best_val + tie:
            best_val = float(top)
            best_x = best_z = math.inf
        if top >= best_val - tie:
            cand = np.flatnonzero(vals >= best_val - tie)
            order = np.lexsort((zs_[cand], xs_[cand]))
            k = cand[order[0]]
            if (xs_[k], zs_[k]) < (best_x, best_z):
                best_x, best_z = float(xs_[k]), float(zs_[k])
            best_val = max(best_val, float(top))

    update(val, px, pz)
    while math.hypot(hx, hz) > tol:
        bound = val + math.hypot(hx, hz)
        keep = np.flatnonzero(bound > best_val + tol)
        if not len(keep):
            break
        if len(keep) > max_cells:
            order = np.lexsort((pz[keep], px[keep], -bound[keep]))
            keep = keep[order[:max_cells]]
        hx, hz = 0.5 * hx, 0.5 * hz
        kx, kz = px[keep], pz[keep]
        px = np.concatenate([kx - hx, kx + hx, kx - hx, kx + hx])
        pz = np.concatenate([kz - hz, kz - hz, kz + hz, kz + hz])
        val = _clearance_arrays(rect, c, r, px, pz)
        update(val, px, pz)

    if not best_val > 0:
        raise PlaneFullError(f"no free space left on the plane (max clearance {best_val:.3g})")
    return Disc((best_x, best_z), best_val)


def _pose_weights(available: Sequence[Pose], standing_probability: float) -> np.ndarray:
    base = {
        Pose.STANDING: standing_probability,
        Pose.LYING_X: 0.5 * (1.0 - standing_probability),
        Pose.LYING_Z: 0.5 * (1.0 - standing_probability),
    }
    w = np.array([base[p] for p in available], dtype=float)
    if w.sum() <= 0:
        w = np.ones(len(available))
    return w / w.sum()


def sample_pose(item: LayoutItem, rng: np.random.Generator, standing_probability: float = 0.5) -> Pose:
    poses = [p for p in Pose if p in item.footprints]
    if len(poses) == 1:
        return poses[0]
    return poses[int(rng.choice(len(poses), p=_pose_weights(poses, standing_probability)))]


def place_objects(
    library: Sequence[LayoutItem],
    plane: Rect,
    rng: np.random.Generator,
    keep_probability: float = 0.7,
    standing_probability: float = 0.5,
    max_instances_per_type: int | None = None,
    grid: int = 200,
) -> list[Placement]:
    """Randomly fill ``plane`` with library objects.

    Every round draws a library entry (with replacement) and one of its poses.
    If the pose's excircle is larger in area than the current maximum
    inscribed circle, the entry is dropped from the pool for good; otherwise
    the object gets a random rotation about Y and is placed concentric with
    that circle. When the pool is empty each placement survives independently
    with ``keep_probability``.
    """
    if not 0.0 <= keep_probability <= 1.0:
        raise ValueError(f"keep_probability must be in [0, 1], got {keep_probability}")
    candidates = [it for it in library if it.footprints]
    region = PlaneRegion(plane)
    placed: list[Placement] = []
    counts: dict[str, int] = {}
    while candidates:
        item = candidates[int(rng.integers(len(candidates)))]
        pose = sample_pose(item, rng, standing_probability)
        excircle = item.footprints[pose]
        try:
            incircle = max_inscribed_circle(region, grid=grid)
            incircle_area = incircle.area
        except PlaneFullError:
            incircle, incircle_area = None, 0.0
        if excircle.area > incircle_area:
            candidates.remove(item)
            continue
        theta = float(rng.uniform(0.0, 2.0 * math.pi))
        disc = Disc(incircle.center, excircle.radius)
        placed.append(Placement(item.object_id, disc, theta, pose))
        region = region.with_obstacle(disc)
        counts[item.object_id] = counts.get(item.object_id, 0) + 1
        if max_instances_per_type is not None and counts[item.object_id] >= max_instances_per_type:
            candidates.remove(item)
    keep = rng.random(len(placed)) < keep_probability
    return [p for p, k in zip(placed, keep) if k]
