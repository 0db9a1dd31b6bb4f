"""Configuration, frame generation and dataset export.

Output layout under the dataset directory::

    images/NNNNNN.png       fisheye RGB frames
    metadata/NNNNNN.json    per-frame camera, lights, layout and seeds
    annotations.json        COCO-style manifest

JSON is written with sorted keys and floats rounded to ``FLOAT_DIGITS``
decimals so that equal configurations give byte-identical files.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Any

import numpy as np
import yaml
from PIL import Image as PILImage
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import __version__
from .assets import AssetLibrary, load_library, load_texture_pool
from .camera import ClipPlanes, FisheyeCamera, FisheyeDistortion, PerturbationRanges, PinholeIntrinsics
from .labeler import AnnotationSet, annotate_scene
from .render import Scene, render_frame, to_uint8
from .scene import MAX_EXTERIOR_LIGHTS, MAX_INTERIOR_LIGHTS, Cuboid, RandomizationConfig, assemble_scene

log = logging.getLogger(__name__)

FLOAT_DIGITS = 9


class ConfigError(ValueError):
    """Configuration file missing, unreadable or invalid."""


class FrameError(RuntimeError):
    def __init__(self, frame: int, cause: BaseException):
        super().__init__(f"frame {frame}: {type(cause).__name__}: {cause}")
        self.frame = frame


# ---------------------------------------------------------------------------
# schema

NonNeg = Annotated[float, Field(ge=0)]
Prob = Annotated[float, Field(ge=0, le=1)]


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _ordered(v: tuple, what: str) -> tuple:
    if v[0] > v[1]:
        raise ValueError(f"{what} minimum {v[0]} exceeds maximum {v[1]}")
    return v


class LightsConfig(_Model):
    interior: tuple[int, int] = (1, MAX_INTERIOR_LIGHTS)
    exterior: tuple[int, int] = (0, MAX_EXTERIOR_LIGHTS)
    intensity: tuple[NonNeg, NonNeg] = (0.5, 2.0)
    exterior_shell: NonNeg = 0.5
    color_min: Prob = 0.85

    @field_validator("interior")
    @classmethod
    def _interior_cap(cls, v):
        if v[0] < 1:
            raise ValueError(f"at least 1 interior light is required, got minimum {v[0]}")
        if v[1] > MAX_INTERIOR_LIGHTS:
            raise ValueError(f"interior light count is capped at {MAX_INTERIOR_LIGHTS}, got maximum {v[1]}")
        return _ordered(v, "interior light count")

    @field_validator("exterior")
    @classmethod
    def _exterior_cap(cls, v):
        if v[0] < 0:
            raise ValueError(f"exterior light count cannot be negative, got minimum {v[0]}")
        if v[1] > MAX_EXTERIOR_LIGHTS:
            raise ValueError(f"exterior light count is capped at {MAX_EXTERIOR_LIGHTS}, got maximum {v[1]}")
        return _ordered(v, "exterior light count")

    @field_validator("intensity")
    @classmethod
    def _intensity(cls, v):
        return _ordered(v, "intensity")


class LayoutConfig(_Model):
    keep_probability: Prob = 0.7
    standing_probability: Prob = 0.5
    max_instances_per_type: Annotated[int, Field(ge=1)] | None = None
    grid: Annotated[int, Field(ge=8)] = 200


class DeformConfig(_Model):
    probability: Prob = 0.5
    max_handles: Annotated[int, Field(ge=1)] = 3
    ring_depth: Annotated[int, Field(ge=1)] = 2
    magnitude: NonNeg = 0.03


class CameraConfig(_Model):
    width: Annotated[int, Field(ge=8)] = 1000
    height: Annotated[int, Field(ge=8)] = 1000
    fx: Annotated[float, Field(gt=0)] = 300.0
    fy: Annotated[float, Field(gt=0)] = 300.0
    cx: float = 499.5
    cy: float = 499.5
    k: tuple[float, float, float, float] = (0.02, -0.005, 0.0, 0.0)
    skew: float = 0.0
    theta_max_deg: Annotated[float, Field(gt=0, lt=90)] = 75.0
    near: Annotated[float, Field(gt=0)] = 0.01
    far: Annotated[float, Field(gt=0)] = 10.0

    @model_validator(mode="after")
    def _clip(self):
        if self.far <= self.near:
            raise ValueError(f"far ({self.far}) must exceed near ({self.near})")
        return self


class PerturbationConfig(_Model):
    focal: NonNeg = 0.05
    principal_point: NonNeg = 10.0
    distortion: NonNeg = 0.02
    position: NonNeg = 0.02
    orientation_deg: NonNeg = 2.0


class EnvironmentConfig(_Model):
    width: Annotated[float, Field(gt=0)] = 0.6
    depth: Annotated[float, Field(gt=0)] = 0.45
    height: Annotated[float, Field(gt=0)] = 0.45


class RenderConfig(_Model):
    supersample: Annotated[int, Field(ge=1, le=4)] = 2
    ambient: NonNeg = 0.1
    exposure: NonNeg = 0.02


class LabelConfig(_Model):
    min_pixels: Annotated[int, Field(ge=1)] = 25


class GeneratorConfig(_Model):
    library: str
    textures: str
    frames: Annotated[int, Field(ge=0)] = 1
    seed: int = 0
    workers: Annotated[int, Field(ge=1)] = 1
    environment: EnvironmentConfig = EnvironmentConfig()
    camera: CameraConfig = CameraConfig()
    perturbation: PerturbationConfig = PerturbationConfig()
    lights: LightsConfig = LightsConfig()
    layout: LayoutConfig = LayoutConfig()
    deform: DeformConfig = DeformConfig()
    render: RenderConfig = RenderConfig()
    labels: LabelConfig = LabelConfig()
    # Relative asset paths resolve against this directory; not part of the schema.
    base_dir: str = Field(default=".", exclude=True)

    def library_path(self) -> Path:
        return Path(self.base_dir) / self.library

    def textures_path(self) -> Path:
        return Path(self.base_dir) / self.textures

    def randomization(self) -> RandomizationConfig:
        lt, lay, d, p = self.lights, self.layout, self.deform, self.perturbation
        return RandomizationConfig(
            interior_lights=lt.interior, exterior_lights=lt.exterior, intensity=lt.intensity,
            exterior_shell=lt.exterior_shell, light_color_min=lt.color_min,
            standing_probability=lay.standing_probability, keep_probability=lay.keep_probability,
            max_instances_per_type=lay.max_instances_per_type, layout_grid=lay.grid,
            deform_probability=d.probability, max_handles=d.max_handles, ring_depth=d.ring_depth,
            deform_magnitude=d.magnitude,
            perturbation=PerturbationRanges(p.focal, p.principal_point, p.distortion, p.position, p.orientation_deg),
            master_seed=self.seed,
        )

    def base_camera(self) -> FisheyeCamera:
        c = self.camera
        return FisheyeCamera(
            PinholeIntrinsics(c.fx, c.fy, c.cx, c.cy, c.width, c.height),
            FisheyeDistortion(*c.k, skew=c.skew),
            clip=ClipPlanes(c.near, c.far),
            theta_max=math.radians(c.theta_max_deg),
        )

    def cuboid(self) -> Cuboid:
        e = self.environment
        return Cuboid(e.width, e.depth, e.height)

    def echo(self) -> dict:
        """Every content-affecting setting, defaults included, as plain JSON data.

        ``workers`` is left out: it changes scheduling, never output bytes.
        """
        return self.model_dump(mode="json", exclude={"workers"})


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        msg = err["msg"].removeprefix("Value error, ")
        lines.append(f"{path}: {msg}")
    return "; ".join(lines)


def config_from_dict(data: Any, base_dir: str | Path = ".") -> GeneratorConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping at the top level")
    if "base_dir" in data:
        raise ConfigError("base_dir: extra inputs are not permitted")
    try:
        return GeneratorConfig(**data, base_dir=str(base_dir))
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def parse_config(path: str | Path) -> GeneratorConfig:
    """Load and validate a YAML (or JSON) configuration file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"configuration file not found: {path}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    return config_from_dict(data if data is not None else {}, base_dir=path.parent)


# ---------------------------------------------------------------------------
# JSON output


def normalize(obj: Any) -> Any:
    """Plain JSON data with floats rounded to ``FLOAT_DIGITS`` decimals."""
    if isinstance(obj, dict):
        return {str(k): normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [normalize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return normalize(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise ValueError(f"cannot serialize non-finite value {v}")
        v = round(v, FLOAT_DIGITS)
        return 0.0 if v == 0 else v
    return obj


def dump_json(obj: Any, path: Path) -> None:
    text = json.dumps(normalize(obj), sort_keys=True, indent=1, ensure_ascii=False, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# frames


@dataclass(frozen=True)
class FrameResult:
    frame: int
    width: int
    height: int
    camera: dict
    annotations: AnnotationSet
    failures: int  # fisheye pixels whose undistortion diverged


class FrameContext:
    """Assets and derived settings shared by all frames of one run."""

    def __init__(self, cfg: GeneratorConfig, library: AssetLibrary | None = None,
                 textures: list | None = None):
        self.cfg = cfg
        self.library = library if library is not None else load_library(cfg.library_path())
        self.textures = textures if textures is not None else load_texture_pool(cfg.textures_path())
        self.randomization = cfg.randomization()
        self.camera = cfg.base_camera()
        self.cuboid = cfg.cuboid()

    def scene(self, frame: int) -> Scene:
        return assemble_scene(self.randomization, self.library, self.cuboid, self.textures, self.camera, frame)

    def render(self, frame: int):
        """``(scene, render result, annotations)`` of one frame."""
        sc = self.scene(frame)
        r = self.cfg.render
        res = render_frame(sc, sc.camera, r.supersample, r.ambient, r.exposure)
        ann = annotate_scene(sc, sc.camera, self.cfg.labels.min_pixels, r.supersample,
                             image_id=frame + 1, render=res)
        return sc, res, ann


def frame_name(frame: int) -> str:
    return f"{frame:06d}"


def write_png(img: np.ndarray, path: Path) -> None:
    PILImage.fromarray(to_uint8(img)).save(path, optimize=False)


def _frame_record(sc: Scene, ann: AnnotationSet, failures: int) -> dict:
    return {
        **sc.metadata,
        "undistort_failures": failures,
        "annotations": [
            {"instance_id": a.instance_id, "category_id": a.category_id, "bbox": a.bbox.as_list(), "area": a.area}
            for a in ann.boxes
        ],
    }


def run_frame(ctx: FrameContext, frame: int, out: Path) -> FrameResult:
    try:
        sc, res, ann = ctx.render(frame)
        name = frame_name(frame)
        write_png(res.image, out / "images" / f"{name}.png")
        dump_json(_frame_record(sc, ann, res.remap.failures), out / "metadata" / f"{name}.json")
    except Exception as exc:
        raise FrameError(frame, exc) from exc
    i = sc.camera.intrinsics
    return FrameResult(frame, i.width, i.height, sc.metadata["camera"], ann, res.remap.failures)


_WORKER: FrameContext | None = None


def _init_worker(cfg_data: dict, base_dir: str) -> None:
    global _WORKER
    _WORKER = FrameContext(config_from_dict(cfg_data, base_dir))


def _worker_frame(frame: int, out: str) -> FrameResult:
    assert _WORKER is not None
    return run_frame(_WORKER, frame, Path(out))


def build_manifest(cfg: GeneratorConfig, library: AssetLibrary, results: list[FrameResult]) -> dict:
    images, annotations, degenerate = [], [], []
    ann_id = 1
    for r in sorted(results, key=lambda r: r.frame):
        image_id = r.frame + 1
        images.append({
            "id": image_id, "file_name": f"images/{frame_name(r.frame)}.png", "width": r.width,
            "height": r.height, "frame": r.frame, "seed": cfg.seed, "camera": r.camera,
        })
        if not r.annotations.boxes:
            degenerate.append(r.frame)
        for a in r.annotations.boxes:
            annotations.append({
                "id": ann_id, "image_id": image_id, "category_id": a.category_id,
                "bbox": a.bbox.as_list(), "area": a.area, "iscrowd": 0, "instance_id": a.instance_id,
            })
            ann_id += 1
    return {
        "info": {"generator": "vendsynth", "version": __version__, "config": cfg.echo()},
        "categories": [{"id": cid, "name": name, "supercategory": "product"} for cid, name in library.categories],
        "images": images,
        "annotations": annotations,
        "degenerate_frames": degenerate,
    }


def generate_dataset(cfg: GeneratorConfig, out: str | Path, workers: int | None = None) -> dict:
    """Render ``cfg.frames`` frames into ``out`` and write the manifest.

    Frames are independent; with ``workers > 1`` they render in a process
    pool and are merged in frame order, giving the same files as a
    sequential run.
    """
    out = Path(out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "metadata").mkdir(parents=True, exist_ok=True)
    workers = cfg.workers if workers is None else workers
    if workers < 1:
        raise ValueError("workers must be at least 1")
    ctx = FrameContext(cfg)
    frames = list(range(cfg.frames))
    if workers == 1 or len(frames) <= 1:
        results = [run_frame(ctx, f, out) for f in frames]
    else:
        data = cfg.model_dump(mode="json")
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(data, cfg.base_dir)) as pool:
            results = list(pool.map(_worker_frame, frames, [str(out)] * len(frames)))
    failures = sum(r.failures for r in results)
    if failures:
        log.warning("%d fisheye pixels failed to undistort across the run", failures)
    manifest = build_manifest(cfg, ctx.library, results)
    dump_json(manifest, out / "annotations.json")
    return manifest
