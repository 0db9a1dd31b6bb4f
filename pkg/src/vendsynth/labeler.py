"""Bounding-box annotation of rendered scenes.

The reference procedure re-renders the scene once per object with the target
emitting white, everything else emitting black and all lights off, then takes
the pixel extents of the white region. The fast path warps the rasterizer's
object-id buffer with the same bilinear weights and threshold, so both paths
produce the same masks bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import FisheyeCamera
from .render import RenderResult, Scene, render_frame, warp_instance_ids

MIN_PIXELS = 25
MASK_THRESHOLD = 0.5


@dataclass(frozen=True)
class BBox:
    """Pixel box: top-left ``(x, y)`` and extents ``(w, h)``."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"box extents must be at least 1, got {self.w}x{self.h}")
        if self.x < 0 or self.y < 0:
            raise ValueError("box origin must be non-negative")

    def as_list(self) -> list[int]:
        return [self.x, self.y, self.w, self.h]

    def within(self, width: int, height: int) -> bool:
        return self.x + self.w <= width and self.y + self.h <= height


@dataclass(frozen=True)
class Annotation:
    instance_id: int
    category_id: int
    bbox: BBox
    area: int  # visible pixel count


@dataclass(frozen=True)
class AnnotationSet:
    image_id: int
    width: int
    height: int
    boxes: tuple[Annotation, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for a in self.boxes:
            if not a.bbox.within(self.width, self.height):
                raise ValueError(f"box {a.bbox} exceeds the {self.width}x{self.height} image")


def _check_index(scene: Scene, index: int) -> None:
    if not 0 <= index < len(scene.objects):
        raise IndexError(f"instance index {index} out of range for a scene with {len(scene.objects)} objects")


def render_object_mask(scene: Scene, cam: FisheyeCamera | None, instance_index: int,
                       supersample: int = 2) -> np.ndarray:
    """White/black re-render of object ``instance_index``; float mask in {0, 1}."""
    _check_index(scene, instance_index)
    cam = cam if cam is not None else scene.camera
    n_bg = len(scene.background)
    emission = np.zeros((n_bg + len(scene.objects), 3))
    emission[n_bg + instance_index] = 1.0
    res = render_frame(scene, cam, supersample, emission=emission, lights=False)
    return (res.image[..., 0] > MASK_THRESHOLD).astype(np.float64)


def mask_bbox(mask: np.ndarray, min_pixels: int = MIN_PIXELS) -> BBox | None:
    """Tight box around the nonzero pixels, or None below ``min_pixels``."""
    m = np.asarray(mask) != 0
    if m.sum() < max(min_pixels, 1):
        return None
    rows = np.flatnonzero(m.any(axis=1))
    cols = np.flatnonzero(m.any(axis=0))
    return BBox(int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))


def instance_masks(scene: Scene, cam: FisheyeCamera | None = None, supersample: int = 2,
                   method: str = "idbuffer", render: RenderResult | None = None) -> list[np.ndarray]:
    """Boolean visibility mask of every object in ``scene.objects``, in order.

    ``render`` may pass the frame's own render result so the id buffer is
    not rasterized twice.
    """
    cam = cam if cam is not None else scene.camera
    if method == "reference":
        return [render_object_mask(scene, cam, k, supersample) > 0 for k in range(len(scene.objects))]
    if method != "idbuffer":
        raise ValueError(f"unknown mask method {method!r}")
    if not scene.objects:
        return []
    ids = [o.instance_id for o in scene.objects]
    if len(set(ids)) != len(ids) or min(ids) < 0:
        raise ValueError("scene objects need distinct non-negative instance ids")
    if render is None:
        render = render_frame(scene, cam, supersample, emission=np.zeros((len(scene.all_objects()), 3)),
                              lights=False)
    label = warp_instance_ids(render.gbuffer.instance_ids(), render.remap)
    return [label == i for i in ids]


def annotate_scene(scene: Scene, cam: FisheyeCamera | None = None, min_pixels: int = MIN_PIXELS,
                   supersample: int = 2, method: str = "idbuffer", image_id: int = 0,
                   render: RenderResult | None = None) -> AnnotationSet:
    cam = cam if cam is not None else scene.camera
    masks = instance_masks(scene, cam, supersample, method, render)
    boxes = []
    for obj, m in zip(scene.objects, masks):
        box = mask_bbox(m, min_pixels)
        if box is None:
            continue
        if obj.category_id is None:
            raise ValueError(f"object {obj.name!r} has no category id")
        boxes.append(Annotation(obj.instance_id, int(obj.category_id), box, int(m.sum())))
    w, h = cam.intrinsics.width, cam.intrinsics.height
    return AnnotationSet(image_id, w, h, tuple(boxes))
