"""Procedural meshes, textures and a demo asset library.

Real deployments load scanned product meshes; these stand-ins let the
pipeline, the tests and the CLI run without external data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .geometry import MeshError, TriMesh, load_mesh, save_obj

LIBRARY_MANIFEST = "library.json"


def grid_mesh(nx: int, nz: int, spacing: float = 1.0) -> TriMesh:
    """Planar ``nx`` x ``nz`` vertex grid in the XZ plane (y = 0), normals +Y."""
    xs, zs = np.meshgrid(np.arange(nx) * spacing, np.arange(nz) * spacing, indexing="xy")
    verts = np.column_stack([xs.ravel(), np.zeros(xs.size), zs.ravel()])
    uv = np.column_stack([xs.ravel() / max(xs.max(), 1e-12), 1.0 - zs.ravel() / max(zs.max(), 1e-12)])
    tris = []
    for j in range(nz - 1):
        for i in range(nx - 1):
            a = j * nx + i
            b, c, d = a + 1, a + nx, a + nx + 1
            tris += [(a, c, b), (b, c, d)]
    return TriMesh(verts, np.array(tris), uv)


def quad_mesh(corners: np.ndarray, texture_id: str | None = None, uv_repeat: tuple[float, float] = (1.0, 1.0)) -> TriMesh:
    """Two-triangle quad from 4 corners in order (uv 00, 10, 11, 01)."""
    ru, rv = uv_repeat
    uv = np.array([[0, 0], [ru, 0], [ru, rv], [0, rv]], dtype=float)
    return TriMesh(np.asarray(corners, dtype=float), np.array([[0, 1, 2], [0, 2, 3]]), uv, texture_id)


def box_mesh(size: tuple[float, float, float], texture_id: str | None = None) -> TriMesh:
    """Axis-aligned box with its base centred at the origin (y from 0 to height).

    Each face has its own vertices; the texture is laid out as a 4x2 atlas of
    six faces.
    """
    sx, sy, sz = (0.5 * size[0], float(size[1]), 0.5 * size[2])
    # (corner list CCW seen from outside, atlas cell)
    faces = [
        ([(-sx, 0, sz), (sx, 0, sz), (sx, sy, sz), (-sx, sy, sz)], (0, 0)),  # +z front
        ([(sx, 0, sz), (sx, 0, -sz), (sx, sy, -sz), (sx, sy, sz)], (1, 0)),  # +x
        ([(sx, 0, -sz), (-sx, 0, -sz), (-sx, sy, -sz), (sx, sy, -sz)], (2, 0)),  # -z
        ([(-sx, 0, -sz), (-sx, 0, sz), (-sx, sy, sz), (-sx, sy, -sz)], (3, 0)),  # -x
        ([(-sx, sy, sz), (sx, sy, sz), (sx, sy, -sz), (-sx, sy, -sz)], (0, 1)),  # top
        ([(-sx, 0, -sz), (sx, 0, -sz), (sx, 0, sz), (-sx, 0, sz)], (1, 1)),  # bottom
    ]
    verts, uvs, tris = [], [], []
    for corners, (cu, cv) in faces:
        base = len(verts)
        for k, p in enumerate(corners):
            verts.append(p)
            du, dv = [(0, 0), (1, 0), (1, 1), (0, 1)][k]
            uvs.append(((cu + 0.02 + 0.96 * du) / 4.0, (cv + 0.02 + 0.96 * dv) / 2.0))
        tris += [(base, base + 1, base + 2), (base, base + 2, base + 3)]
    return TriMesh(np.array(verts), np.array(tris), np.array(uvs), texture_id)


def cylinder_mesh(radius: float, height: float, segments: int = 24, rings: int = 6,
                  texture_id: str | None = None) -> TriMesh:
    """Capped cylinder along +Y with its base at y = 0.

    The side wraps the lower 3/4 of the texture; the caps use the top strip.
    """
    verts, uvs, tris = [], [], []
    for r in range(rings + 1):
        y = height * (r / rings)
        for s in range(segments + 1):
            # the closing column must repeat column 0 bit for bit so it welds
            a = 2 * math.pi * (s % segments) / segments
            verts.append((radius * math.cos(a), y, -radius * math.sin(a)))
            uvs.append((s / segments, 0.75 * r / rings))
    row = segments + 1
    for r in range(rings):
        for s in range(segments):
            a = r * row + s
            tris += [(a, a + 1, a + row + 1), (a, a + row + 1, a + row)]
    for y, up in ((height, True), (0.0, False)):
        centre = len(verts)
        verts.append((0.0, y, 0.0))
        uvs.append((0.5, 0.875))
        first = len(verts)
        for s in range(segments):
            a = 2 * math.pi * s / segments
            verts.append((radius * math.cos(a), y, -radius * math.sin(a)))
            uvs.append((0.5 + 0.45 * math.cos(a), 0.875 + 0.1 * math.sin(a)))
        for s in range(segments):
            i, j = first + s, first + (s + 1) % segments
            tris.append((centre, i, j) if up else (centre, j, i))
    # Side seam and cap rims duplicate positions; deformation welds them.
    return TriMesh(np.array(verts), np.array(tris), np.clip(np.array(uvs), 0, 1), texture_id)


def checker_texture(n: int = 4, size: int = 64, colors=((1.0, 1.0, 1.0), (0.0, 0.0, 0.0))) -> np.ndarray:
    idx = (np.arange(size) * n // size)
    cell = (idx[:, None] + idx[None, :]) % 2
    return np.asarray(colors, dtype=float)[cell]


def product_texture(rng: np.random.Generator, size: int = 128) -> np.ndarray:
    """Label-like texture: a base colour with bands and a contrasting logo block."""
    base = rng.uniform(0.15, 0.95, size=3)
    accent = 1.0 - base * rng.uniform(0.5, 1.0)
    img = np.empty((size, size, 3))
    img[:] = base
    rows = np.arange(size)
    n_bands = int(rng.integers(2, 5))
    for _ in range(n_bands):
        c = int(rng.integers(0, size))
        w = int(rng.integers(3, size // 8))
        img[(rows >= c) & (rows < c + w)] = accent
    x0, y0 = (int(v) for v in rng.integers(size // 8, size // 2, size=2))
    img[y0:y0 + size // 3, x0:x0 + size // 3] = rng.uniform(0, 1, size=3)
    return img


def background_texture(rng: np.random.Generator, size: int = 128) -> np.ndarray:
    """Low-contrast noisy tiling used for the shelf and walls."""
    base = rng.uniform(0.3, 0.9, size=3)
    noise = rng.normal(0.0, 0.05, size=(size // 8, size // 8, 1))
    noise = np.kron(noise, np.ones((8, 8, 1)))
    yy, xx = np.mgrid[0:size, 0:size]
    period = int(rng.integers(8, 32))
    stripes = 0.06 * (((xx // period) + (yy // period)) % 2)[..., None]
    return np.clip(base + noise + stripes, 0.0, 1.0)


def save_texture(img: np.ndarray, path: str | Path) -> None:
    arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    PILImage.fromarray(arr).save(path)


def load_texture(path: str | Path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr


@dataclass(frozen=True, eq=False)
class LibraryObject:
    name: str
    category_id: int
    mesh: TriMesh
    texture: np.ndarray
    material: str = "rigid"


@dataclass(frozen=True, eq=False)
class AssetLibrary:
    categories: tuple[tuple[int, str], ...]
    objects: tuple[LibraryObject, ...]


def load_library(directory: str | Path) -> AssetLibrary:
    """Read ``library.json`` and the OBJ/PNG files it references.

    Manifest layout::

        {"categories": [{"id": 1, "name": "cola"}, ...],
         "objects": [{"name": "cola", "category_id": 1, "mesh": "cola.obj",
                      "texture": "cola.png", "material": "rigid"}, ...]}
    """
    directory = Path(directory)
    manifest_path = directory / LIBRARY_MANIFEST
    try:
        data = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FileNotFoundError(f"asset manifest not found: {manifest_path}") from None
    categories = tuple((int(c["id"]), str(c["name"])) for c in data["categories"])
    known = {c for c, _ in categories}
    objects = []
    for entry in data["objects"]:
        if int(entry["category_id"]) not in known:
            raise ValueError(f"object {entry['name']!r} has unknown category {entry['category_id']}")
        material = entry.get("material", "rigid")
        if material not in ("rigid", "soft"):
            raise ValueError(f"object {entry['name']!r}: material must be 'rigid' or 'soft'")
        try:
            mesh = load_mesh(directory / entry["mesh"], texture_id=entry["texture"])
        except MeshError as exc:
            raise MeshError(f"{entry['mesh']}: {exc}") from None
        objects.append(LibraryObject(
            name=str(entry["name"]),
            category_id=int(entry["category_id"]),
            mesh=mesh,
            texture=load_texture(directory / entry["texture"]),
            material=material,
        ))
    if not objects:
        raise ValueError(f"asset library {directory} is empty")
    return AssetLibrary(categories, tuple(objects))


def load_texture_pool(directory: str | Path) -> list[tuple[str, np.ndarray]]:
    files = sorted(Path(directory).glob("*.png"))
    if not files:
        raise FileNotFoundError(f"no PNG textures in {directory}")
    return [(f.name, load_texture(f)) for f in files]


_DEMO_PRODUCTS = [
    ("cola_can", "cyl", (0.033, 0.12)),
    ("juice_bottle", "cyl", (0.035, 0.2)),
    ("water_bottle", "cyl", (0.032, 0.22)),
    ("chips_box", "box", (0.09, 0.16, 0.05)),
    ("snack_bar", "box", (0.12, 0.03, 0.04)),
    ("tea_carton", "box", (0.06, 0.14, 0.06)),
    ("coffee_can", "cyl", (0.027, 0.1)),
    ("candy_box", "box", (0.07, 0.05, 0.07)),
    ("yogurt_cup", "cyl", (0.04, 0.07)),
    ("noodle_cup", "cyl", (0.05, 0.09)),
]


def write_demo_assets(root: str | Path, seed: int = 0, n_backgrounds: int = 4) -> tuple[Path, Path]:
    """Write a 10-product demo library and a background texture pool.

    Returns ``(library_dir, texture_dir)``.
    """
    root = Path(root)
    lib, tex = root / "library", root / "textures"
    lib.mkdir(parents=True, exist_ok=True)
    tex.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    categories, objects = [], []
    for cid, (name, kind, dims) in enumerate(_DEMO_PRODUCTS, start=1):
        if kind == "cyl":
            mesh = cylinder_mesh(dims[0], dims[1], texture_id=f"{name}.png")
        else:
            mesh = box_mesh(dims, texture_id=f"{name}.png")
        save_obj(mesh, lib / f"{name}.obj")
        save_texture(product_texture(rng), lib / f"{name}.png")
        categories.append({"id": cid, "name": name})
        objects.append({
            "name": name, "category_id": cid, "mesh": f"{name}.obj",
            "texture": f"{name}.png", "material": "soft" if cid % 3 == 0 else "rigid",
        })
    (lib / LIBRARY_MANIFEST).write_text(
        json.dumps({"categories": categories, "objects": objects}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    for k in range(n_backgrounds):
        save_texture(background_texture(rng), tex / f"bg_{k:02d}.png")
    return lib, tex
