"""Randomized assembly of one vending-machine layer.

The environment is a cuboid: a textured holding plane at y = 0, back and
side walls, an open front face and a ceiling camera looking straight down.
Every random quantity of a frame is drawn from streams derived from
``(master_seed, frame_index)`` only, so frames can be generated in any order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .assets import AssetLibrary, LibraryObject, quad_mesh
from .camera import CameraPose, FisheyeCamera, PerturbationRanges, perturb_intrinsics
from .deform import RIGID_LAMBDA, SOFT_LAMBDA, DeformationError, deform, select_deformation_region
from .geometry import Disc, Pose, Rect, RigidTransform, TriMesh, compute_aabb, footprint_excircle, pose_rotation
from .layout import LayoutItem, place_objects
from .render import PointLight, Scene, SceneObject

MAX_INTERIOR_LIGHTS = 5
MAX_EXTERIOR_LIGHTS = 3

# Order of the per-frame child streams. Appending is safe; reordering
# changes every generated dataset.
_STREAMS = ("deform", "layout", "lights", "texture", "camera")


def _check_range(name: str, rng: tuple[float, float], lo: float, hi: float) -> None:
    a, b = rng
    if not (lo <= a <= b <= hi):
        raise ValueError(f"{name} range {list(rng)} must satisfy {lo} <= min <= max <= {hi}")


@dataclass(frozen=True)
class Cuboid:
    """Interior of one machine layer; the plane spans x in +-width/2, z in +-depth/2."""

    width: float = 0.6
    depth: float = 0.45
    height: float = 0.45

    def __post_init__(self):
        if min(self.width, self.depth, self.height) <= 0:
            raise ValueError("cuboid dimensions must be positive")

    @property
    def plane(self) -> Rect:
        return Rect(-self.width / 2, -self.depth / 2, self.width / 2, self.depth / 2)


@dataclass(frozen=True)
class RandomizationConfig:
    interior_lights: tuple[int, int] = (1, MAX_INTERIOR_LIGHTS)
    exterior_lights: tuple[int, int] = (0, MAX_EXTERIOR_LIGHTS)
    intensity: tuple[float, float] = (0.5, 2.0)
    exterior_shell: float = 0.5  # meters beyond the front face
    light_color_min: float = 0.85
    standing_probability: float = 0.5
    keep_probability: float = 0.7
    max_instances_per_type: int | None = None
    layout_grid: int = 200
    deform_probability: float = 0.5
    max_handles: int = 3
    ring_depth: int = 2
    deform_magnitude: float = 0.03  # fraction of the object's largest extent
    perturbation: PerturbationRanges = field(default_factory=PerturbationRanges)
    master_seed: int = 0

    def __post_init__(self):
        _check_range("interior light count", self.interior_lights, 1, MAX_INTERIOR_LIGHTS)
        _check_range("exterior light count", self.exterior_lights, 0, MAX_EXTERIOR_LIGHTS)
        _check_range("light intensity", self.intensity, 0.0, math.inf)
        _check_range("light colour minimum", (self.light_color_min, 1.0), 0.0, 1.0)
        for name in ("standing_probability", "keep_probability", "deform_probability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.exterior_shell < 0:
            raise ValueError("exterior_shell must be non-negative")
        if self.max_handles < 1 or self.ring_depth < 1:
            raise ValueError("max_handles and ring_depth must be at least 1")
        if self.deform_magnitude < 0:
            raise ValueError("deform_magnitude must be non-negative")


def frame_streams(master_seed: int, frame_index: int) -> dict[str, np.random.Generator]:
    """Independent generators for each randomized stage of a frame."""
    seq = np.random.SeedSequence([int(master_seed), int(frame_index)])
    return {name: np.random.default_rng(s) for name, s in zip(_STREAMS, seq.spawn(len(_STREAMS)))}


def sample_lights(cfg: RandomizationConfig, cuboid: Cuboid, rng: np.random.Generator) -> list[PointLight]:
    n_in = int(rng.integers(cfg.interior_lights[0], cfg.interior_lights[1] + 1))
    n_out = int(rng.integers(cfg.exterior_lights[0], cfg.exterior_lights[1] + 1))
    hw, hd = cuboid.width / 2, cuboid.depth / 2
    lights = []
    for k in range(n_in + n_out):
        inside = k < n_in
        x = rng.uniform(-hw, hw)
        y = rng.uniform(0.0, cuboid.height)
        z = rng.uniform(-hd, hd) if inside else rng.uniform(hd, hd + cfg.exterior_shell)
        lights.append(PointLight(
            position=(float(x), float(y), float(z)),
            intensity=float(rng.uniform(*cfg.intensity)),
            color=tuple(float(c) for c in rng.uniform(cfg.light_color_min, 1.0, size=3)),
            location="interior" if inside else "exterior",
        ))
    return lights


def select_background(textures: list[tuple[str, np.ndarray]], rng: np.random.Generator) -> tuple[str, np.ndarray]:
    """One ``(name, image)`` from the pool, uniformly."""
    if not textures:
        raise ValueError("background texture pool is empty")
    return textures[int(rng.integers(len(textures)))]


def environment_meshes(cuboid: Cuboid) -> list[TriMesh]:
    """Holding plane, back wall, left and right walls."""
    hw, hd, h = cuboid.width / 2, cuboid.depth / 2, cuboid.height
    plane = quad_mesh(np.array([[-hw, 0, hd], [hw, 0, hd], [hw, 0, -hd], [-hw, 0, -hd]]), uv_repeat=(1.0, 1.0))
    back = quad_mesh(np.array([[-hw, 0, -hd], [hw, 0, -hd], [hw, h, -hd], [-hw, h, -hd]]))
    left = quad_mesh(np.array([[-hw, 0, hd], [-hw, 0, -hd], [-hw, h, -hd], [-hw, h, hd]]))
    right = quad_mesh(np.array([[hw, 0, -hd], [hw, 0, hd], [hw, h, hd], [hw, h, -hd]]))
    return [plane, back, left, right]


def ceiling_camera(base: FisheyeCamera, cuboid: Cuboid) -> FisheyeCamera:
    """``base`` moved to the ceiling centre, looking down at the plane.

    The camera's image-up direction points to the back wall.
    """
    eye = (0.0, cuboid.height, 0.0)
    pose = CameraPose.look_at(eye, (0.0, 0.0, 0.0), up=(0.0, 0.0, -1.0))
    return FisheyeCamera(base.intrinsics, base.distortion, pose, base.clip, base.theta_max)


@dataclass(frozen=True, eq=False)
class _Variant:
    """A library object as it appears in one frame (possibly deformed)."""

    source: LibraryObject
    mesh: TriMesh
    handles: int


def _deformed_variant(obj: LibraryObject, cfg: RandomizationConfig, rng: np.random.Generator) -> _Variant:
    if cfg.deform_probability == 0 or rng.random() >= cfg.deform_probability:
        return _Variant(obj, obj.mesh, 0)
    extent = float(np.max(obj.mesh.vertices.max(axis=0) - obj.mesh.vertices.min(axis=0)))
    n_handles = int(rng.integers(1, cfg.max_handles + 1))
    lam = SOFT_LAMBDA if obj.material == "soft" else RIGID_LAMBDA
    try:
        spec = select_deformation_region(obj.mesh, rng, n_handles, cfg.ring_depth,
                                         cfg.deform_magnitude * extent, rigidity=lam)
        return _Variant(obj, deform(obj.mesh, spec), n_handles)
    except DeformationError:
        # Meshes too small or unanchorable for the sampled handles stay rigid.
        return _Variant(obj, obj.mesh, 0)


def _footprints(mesh: TriMesh) -> dict[Pose, Disc]:
    box = compute_aabb(mesh)
    return {pose: footprint_excircle(box, pose) for pose in Pose}


def placement_transform(mesh: TriMesh, pose: Pose, rotation_y: float, center: tuple[float, float]) -> RigidTransform:
    """Rest ``mesh`` on the plane in ``pose``, spun by ``rotation_y`` about its footprint centre."""
    p = pose_rotation(pose)
    v = mesh.vertices @ p.T
    lo, hi = v.min(axis=0), v.max(axis=0)
    anchor = np.array([0.5 * (lo[0] + hi[0]), lo[1], 0.5 * (lo[2] + hi[2])])
    ry = Rotation.from_euler("y", rotation_y).as_matrix()
    rot = ry @ p
    trans = np.array([center[0], 0.0, center[1]]) - ry @ anchor
    return RigidTransform(rot, trans)


def assemble_scene(
    cfg: RandomizationConfig,
    library: AssetLibrary,
    cuboid: Cuboid,
    textures: list[tuple[str, np.ndarray]],
    base_camera: FisheyeCamera,
    frame_index: int = 0,
) -> Scene:
    """Build the randomized scene of frame ``frame_index``.

    Deformation is sampled once per object type per frame, so every instance
    of a type in one frame shares the deformed shape and its footprint.
    """
    if not textures:
        raise ValueError("background texture pool is empty")
    if not library.objects:
        raise ValueError("object library is empty")
    rs = frame_streams(cfg.master_seed, frame_index)

    variants = [_deformed_variant(o, cfg, rs["deform"]) for o in library.objects]
    items = [LayoutItem(str(k), _footprints(v.mesh)) for k, v in enumerate(variants)]
    placements = place_objects(items, cuboid.plane, rs["layout"], keep_probability=cfg.keep_probability,
                               standing_probability=cfg.standing_probability,
                               max_instances_per_type=cfg.max_instances_per_type, grid=cfg.layout_grid)
    lights = sample_lights(cfg, cuboid, rs["lights"])
    tex_name, tex = select_background(textures, rs["texture"])
    cam = perturb_intrinsics(ceiling_camera(base_camera, cuboid), cfg.perturbation, rs["camera"])

    objects, records = [], []
    for inst, pl in enumerate(placements):
        var = variants[int(pl.object_id)]
        xf = placement_transform(var.mesh, pl.pose, pl.rotation_y, pl.disc.center)
        objects.append(SceneObject(var.mesh, var.source.texture, xf, instance_id=inst,
                                   category_id=var.source.category_id, name=var.source.name))
        records.append({
            "instance_id": inst, "name": var.source.name, "category_id": var.source.category_id,
            "pose": pl.pose.value, "rotation_y": pl.rotation_y,
            "center": list(pl.disc.center), "radius": pl.disc.radius,
            "deformation_handles": var.handles,
        })
    background = [SceneObject(m, tex, name=f"environment_{k}") for k, m in enumerate(environment_meshes(cuboid))]
    metadata = {
        "frame": int(frame_index),
        "master_seed": int(cfg.master_seed),
        "background_texture": tex_name,
        "camera": cam.to_dict(),
        "lights": [l.to_dict() for l in lights],
        "objects": records,
    }
    return Scene(objects, background, lights, cam, metadata)
