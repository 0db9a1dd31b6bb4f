"""Software rasterizer and fisheye warping.

A frame is drawn in two stages. First a z-buffered pinhole pass fills a
G-buffer (triangle id plus perspective-correct barycentrics) on a canvas
large enough for the fisheye field of view; shading happens afterwards, only
on canvas pixels the warp will read. Then each fisheye pixel is undistorted
to a pinhole ray and bilinearly sampled from the canvas.

Image arrays are float64, shape ``(height, width, 3)`` for colour and
``(height, width)`` for masks, values in [0, 1].
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numba
import numpy as np

from .camera import (
    CameraPose,
    ClipPlanes,
    FisheyeCamera,
    FisheyeDistortion,
    UNDISTORT_DIVERGED,
    UNDISTORT_OK,
    PinholeIntrinsics,
    projection_matrix,
    undistort_points,
)
from .geometry import RigidTransform, TriMesh

log = logging.getLogger(__name__)

AMBIENT = 0.1
# Scales I * cos / d^2 so that lights at shelf distances (~0.3 m) do not
# saturate every pixel.
EXPOSURE = 0.02


@dataclass(frozen=True)
class PointLight:
    position: tuple[float, float, float]
    intensity: float
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)
    location: str = "interior"  # or "exterior"

    def __post_init__(self):
        if self.intensity < 0:
            raise ValueError("light intensity must be non-negative")
        if self.location not in ("interior", "exterior"):
            raise ValueError(f"unknown light location {self.location!r}")

    def to_dict(self) -> dict:
        return {"position": list(self.position), "intensity": self.intensity,
                "color": list(self.color), "location": self.location}


@dataclass(frozen=True, eq=False)
class SceneObject:
    """A mesh placed in the world.

    ``instance_id`` is the product instance index, or -1 for holding plane
    and walls.
    """

    mesh: TriMesh
    texture: np.ndarray
    transform: RigidTransform = field(default_factory=RigidTransform)
    instance_id: int = -1
    category_id: int | None = None
    name: str = ""


@dataclass(eq=False)
class Scene:
    objects: list[SceneObject] = field(default_factory=list)
    background: list[SceneObject] = field(default_factory=list)
    lights: list[PointLight] = field(default_factory=list)
    camera: FisheyeCamera | None = None
    metadata: dict = field(default_factory=dict)

    def all_objects(self) -> list[SceneObject]:
        return list(self.background) + list(self.objects)


# ---------------------------------------------------------------------------
# geometry setup


@dataclass(eq=False)
class _Geometry:
    clip: np.ndarray  # (T, 3, 4)
    uv: np.ndarray  # (T, 3, 2)
    wpos: np.ndarray  # (T, 3, 3)
    nrm: np.ndarray  # (T, 3, 3)
    obj: np.ndarray  # (T,) index into scene.all_objects()


def _gather(objs: list[SceneObject]):
    clips, uvs, wpos, nrms, oids = [], [], [], [], []
    for k, o in enumerate(objs):
        m = o.mesh
        if m.n_triangles == 0:
            continue
        rot = np.asarray(o.transform.rotation)
        v = o.transform.apply(m.vertices)
        n = m.vertex_normals() @ rot.T
        t = m.triangles
        wpos.append(v[t])
        nrms.append(n[t])
        uvs.append(m.uvs[t])
        oids.append(np.full(len(t), k, dtype=np.int32))
    if not wpos:
        z = np.zeros((0, 3, 3))
        return z, np.zeros((0, 3, 2)), z.copy(), np.zeros(0, dtype=np.int32)
    return np.concatenate(wpos), np.concatenate(uvs), np.concatenate(nrms), np.concatenate(oids)


def _clip_near(cam_pos, attrs, obj, near):
    """Clip triangles against ``z_cam >= near``; ``attrs`` are per-corner arrays."""
    inside = cam_pos[:, :, 2] >= near
    count = inside.sum(axis=1)
    keep = count == 3
    out_pos = [cam_pos[keep]]
    out_attr = [[a[keep]] for a in attrs]
    out_obj = [obj[keep]]
    for t in np.flatnonzero((count > 0) & (count < 3)):
        poly = []
        polya = []
        for k in range(3):
            a, b = k, (k + 1) % 3
            pa, pb = cam_pos[t, a], cam_pos[t, b]
            ia, ib = inside[t, a], inside[t, b]
            if ia:
                poly.append(pa)
                polya.append([x[t, a] for x in attrs])
            if ia != ib:
                s = (near - pa[2]) / (pb[2] - pa[2])
                poly.append(pa + s * (pb - pa))
                polya.append([x[t, a] + s * (x[t, b] - x[t, a]) for x in attrs])
        for k in range(1, len(poly) - 1):
            out_pos.append(np.array([[poly[0], poly[k], poly[k + 1]]]))
            for j in range(len(attrs)):
                out_attr[j].append(np.array([[polya[0][j], polya[k][j], polya[k + 1][j]]]))
            out_obj.append(np.array([obj[t]], dtype=np.int32))
    return (np.concatenate(out_pos), [np.concatenate(a) for a in out_attr], np.concatenate(out_obj))


def _setup(objs, intr: PinholeIntrinsics, clip: ClipPlanes, pose: CameraPose) -> _Geometry:
    wpos, uv, nrm, oid = _gather(objs)
    if len(wpos) == 0:
        return _Geometry(np.zeros((0, 3, 4)), uv, wpos, nrm, oid)
    cam = pose.world_to_camera(wpos.reshape(-1, 3)).reshape(-1, 3, 3)
    cam, (uv, wpos, nrm), oid = _clip_near(cam, [uv, wpos, nrm], oid, clip.near)
    eye = np.concatenate([cam[..., :2], -cam[..., 2:3], np.ones(cam.shape[:2] + (1,))], axis=-1)
    clip4 = eye @ projection_matrix(intr, clip).T
    return _Geometry(clip4, uv, wpos, nrm, oid)


# ---------------------------------------------------------------------------
# numba kernels


@numba.njit(cache=True)
def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


@numba.njit(cache=True)
def _owns(ax, ay, bx, by):
    # top edge (horizontal, pointing +x) or left edge (pointing -y), y down
    return (ay == by and bx > ax) or (by < ay)


@numba.njit(cache=True)
def _raster_kernel(clip, width, height, depth, tri_buf, b0_buf, b1_buf):
    sx = np.empty(3)
    sy = np.empty(3)
    sz = np.empty(3)
    iw = np.empty(3)
    for t in range(clip.shape[0]):
        for k in range(3):
            w = clip[t, k, 3]
            iw[k] = 1.0 / w
            sx[k] = (clip[t, k, 0] * iw[k] + 1.0) * 0.5 * width
            sy[k] = (clip[t, k, 1] * iw[k] + 1.0) * 0.5 * height
            sz[k] = clip[t, k, 2] * iw[k]
        area = _edge(sx[0], sy[0], sx[1], sy[1], sx[2], sy[2])
        if area == 0.0 or not math.isfinite(area):
            continue
        # orient so that area > 0; remember the permutation
        i0, i1, i2 = 0, 1, 2
        swapped = area < 0
        if swapped:
            i1, i2 = 2, 1
            area = -area
        x0, y0 = sx[i0], sy[i0]
        x1, y1 = sx[i1], sy[i1]
        x2, y2 = sx[i2], sy[i2]
        xmin = max(0, int(math.ceil(min(x0, x1, x2))))
        xmax = min(width - 1, int(math.floor(max(x0, x1, x2))))
        ymin = max(0, int(math.ceil(min(y0, y1, y2))))
        ymax = min(height - 1, int(math.floor(max(y0, y1, y2))))
        if xmin > xmax or ymin > ymax:
            continue
        own0 = _owns(x1, y1, x2, y2)
        own1 = _owns(x2, y2, x0, y0)
        own2 = _owns(x0, y0, x1, y1)
        inv_area = 1.0 / area
        for py in range(ymin, ymax + 1):
            fy = float(py)
            for px in range(xmin, xmax + 1):
                fx = float(px)
                w0 = _edge(x1, y1, x2, y2, fx, fy)
                w1 = _edge(x2, y2, x0, y0, fx, fy)
                w2 = _edge(x0, y0, x1, y1, fx, fy)
                if w0 < 0 or w1 < 0 or w2 < 0:
                    continue
                if (w0 == 0 and not own0) or (w1 == 0 and not own1) or (w2 == 0 and not own2):
                    continue
                l0 = w0 * inv_area
                l1 = w1 * inv_area
                l2 = w2 * inv_area
                z = l0 * sz[i0] + l1 * sz[i1] + l2 * sz[i2]
                if z < -1.0 or z > 1.0 or z >= depth[py, px]:
                    continue
                q0 = l0 * iw[i0]
                q1 = l1 * iw[i1]
                q2 = l2 * iw[i2]
                s = q0 + q1 + q2
                depth[py, px] = z
                tri_buf[py, px] = t
                # barycentrics w.r.t. the original corner order
                b0_buf[py, px] = q0 / s
                b1_buf[py, px] = (q2 if swapped else q1) / s


@numba.njit(cache=True)
def _sample_tex(atlas, off, tw, th, u, v, out):
    x = u * tw - 0.5
    y = (1.0 - v) * th - 0.5
    x = min(max(x, 0.0), tw - 1.0)
    y = min(max(y, 0.0), th - 1.0)
    x0 = int(math.floor(x))
    y0 = int(math.floor(y))
    x1 = min(x0 + 1, tw - 1)
    y1 = min(y0 + 1, th - 1)
    fx = x - x0
    fy = y - y0
    for c in range(3):
        a = atlas[off + (y0 * tw + x0) * 3 + c]
        b = atlas[off + (y0 * tw + x1) * 3 + c]
        d = atlas[off + (y1 * tw + x0) * 3 + c]
        e = atlas[off + (y1 * tw + x1) * 3 + c]
        out[c] = (1 - fx) * (1 - fy) * a + fx * (1 - fy) * b + (1 - fx) * fy * d + fx * fy * e


@numba.njit(cache=True)
def _shade_kernel(tri_buf, b0_buf, b1_buf, need, uv, wpos, nrm, tri_obj,
                  atlas, tex_off, tex_w, tex_h, emissive, emission,
                  lpos, lint, lcol, cam_center, ambient, exposure, out):
    h, w = tri_buf.shape
    alb = np.empty(3)
    for py in range(h):
        for px in range(w):
            if not need[py, px]:
                continue
            t = tri_buf[py, px]
            if t < 0:
                continue
            b0 = b0_buf[py, px]
            b1 = b1_buf[py, px]
            b2 = 1.0 - b0 - b1
            o = tri_obj[t]
            if emissive[o]:
                for c in range(3):
                    out[py, px, c] = emission[o, c]
                continue
            u = b0 * uv[t, 0, 0] + b1 * uv[t, 1, 0] + b2 * uv[t, 2, 0]
            v = b0 * uv[t, 0, 1] + b1 * uv[t, 1, 1] + b2 * uv[t, 2, 1]
            _sample_tex(atlas, tex_off[o], tex_w[o], tex_h[o], u, v, alb)
            p0 = b0 * wpos[t, 0, 0] + b1 * wpos[t, 1, 0] + b2 * wpos[t, 2, 0]
            p1 = b0 * wpos[t, 0, 1] + b1 * wpos[t, 1, 1] + b2 * wpos[t, 2, 1]
            p2 = b0 * wpos[t, 0, 2] + b1 * wpos[t, 1, 2] + b2 * wpos[t, 2, 2]
            n0 = b0 * nrm[t, 0, 0] + b1 * nrm[t, 1, 0] + b2 * nrm[t, 2, 0]
            n1 = b0 * nrm[t, 0, 1] + b1 * nrm[t, 1, 1] + b2 * nrm[t, 2, 1]
            n2 = b0 * nrm[t, 0, 2] + b1 * nrm[t, 1, 2] + b2 * nrm[t, 2, 2]
            nl = math.sqrt(n0 * n0 + n1 * n1 + n2 * n2)
            if nl > 0:
                n0 /= nl
                n1 /= nl
                n2 /= nl
            # two-sided: face the normal towards the viewer
            if n0 * (cam_center[0] - p0) + n1 * (cam_center[1] - p1) + n2 * (cam_center[2] - p2) < 0:
                n0, n1, n2 = -n0, -n1, -n2
            r = ambient
            g = ambient
            b = ambient
            for k in range(lpos.shape[0]):
                d0 = lpos[k, 0] - p0
                d1 = lpos[k, 1] - p1
                d2 = lpos[k, 2] - p2
                dd = d0 * d0 + d1 * d1 + d2 * d2
                if dd <= 0:
                    continue
                ndl = (n0 * d0 + n1 * d1 + n2 * d2) / math.sqrt(dd)
                if ndl <= 0:
                    continue
                f = exposure * lint[k] * ndl / dd
                r += f * lcol[k, 0]
                g += f * lcol[k, 1]
                b += f * lcol[k, 2]
            out[py, px, 0] = min(max(alb[0] * r, 0.0), 1.0)
            out[py, px, 1] = min(max(alb[1] * g, 0.0), 1.0)
            out[py, px, 2] = min(max(alb[2] * b, 0.0), 1.0)


@numba.njit(cache=True)
def _bilerp(w00, w01, w10, w11, c00, c01, c10, c11):
    return w00 * c00 + w01 * c01 + w10 * c10 + w11 * c11


@numba.njit(cache=True)
def _footprint(sxy, valid, sw, sh, j, i):
    """Bilinear footprint of destination pixel (j, i): corner (x0, y0), weights."""
    if not valid[j, i]:
        return False, 0, 0, 0.0, 0.0, 0.0, 0.0
    x = sxy[j, i, 0]
    y = sxy[j, i, 1]
    x0 = int(math.floor(x))
    y0 = int(math.floor(y))
    if x0 < -1 or y0 < -1 or x0 > sw - 1 or y0 > sh - 1:
        return False, 0, 0, 0.0, 0.0, 0.0, 0.0
    fx = x - x0
    fy = y - y0
    return True, x0, y0, (1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy


@numba.njit(cache=True)
def _warp_kernel(src, sxy, valid, out):
    sh, sw, nc = src.shape
    h, w = valid.shape
    for j in range(h):
        for i in range(w):
            ok, x0, y0, w00, w01, w10, w11 = _footprint(sxy, valid, sw, sh, j, i)
            if not ok:
                continue
            for c in range(nc):
                c00 = src[y0, x0, c] if 0 <= x0 < sw and 0 <= y0 < sh else 0.0
                c01 = src[y0, x0 + 1, c] if 0 <= x0 + 1 < sw and 0 <= y0 < sh else 0.0
                c10 = src[y0 + 1, x0, c] if 0 <= x0 < sw and 0 <= y0 + 1 < sh else 0.0
                c11 = src[y0 + 1, x0 + 1, c] if 0 <= x0 + 1 < sw and 0 <= y0 + 1 < sh else 0.0
                out[j, i, c] = _bilerp(w00, w01, w10, w11, c00, c01, c10, c11)


@numba.njit(cache=True)
def _vote_kernel(ids, sxy, valid, out):
    """Instance id whose bilinear coverage exceeds 0.5 at each fisheye pixel."""
    sh, sw = ids.shape
    h, w = valid.shape
    nb = np.empty(4, dtype=np.int64)
    for j in range(h):
        for i in range(w):
            out[j, i] = -1
            ok, x0, y0, w00, w01, w10, w11 = _footprint(sxy, valid, sw, sh, j, i)
            if not ok:
                continue
            nb[0] = ids[y0, x0] if 0 <= x0 < sw and 0 <= y0 < sh else -1
            nb[1] = ids[y0, x0 + 1] if 0 <= x0 + 1 < sw and 0 <= y0 < sh else -1
            nb[2] = ids[y0 + 1, x0] if 0 <= x0 < sw and 0 <= y0 + 1 < sh else -1
            nb[3] = ids[y0 + 1, x0 + 1] if 0 <= x0 + 1 < sw and 0 <= y0 + 1 < sh else -1
            for q in range(4):
                k = nb[q]
                if k < 0:
                    continue
                v = _bilerp(w00, w01, w10, w11,
                            1.0 if nb[0] == k else 0.0, 1.0 if nb[1] == k else 0.0,
                            1.0 if nb[2] == k else 0.0, 1.0 if nb[3] == k else 0.0)
                if v > 0.5:
                    out[j, i] = k
                    break


@numba.njit(cache=True)
def _need_kernel(sxy, valid, sw, sh, need):
    h, w = valid.shape
    for j in range(h):
        for i in range(w):
            ok, x0, y0, w00, w01, w10, w11 = _footprint(sxy, valid, sw, sh, j, i)
            if not ok:
                continue
            for dy in range(2):
                for dx in range(2):
                    x, y = x0 + dx, y0 + dy
                    if 0 <= x < sw and 0 <= y < sh:
                        need[y, x] = True


# ---------------------------------------------------------------------------
# public API


@dataclass(eq=False)
class GBuffer:
    tri: np.ndarray  # (H, W) int32, -1 where empty
    b0: np.ndarray
    b1: np.ndarray
    depth: np.ndarray  # NDC depth, +inf where empty
    geometry: _Geometry
    objects: list[SceneObject]

    def instance_ids(self) -> np.ndarray:
        inst = np.array([o.instance_id for o in self.objects] + [-1], dtype=np.int64)
        obj = np.where(self.tri >= 0, self.geometry.obj[np.maximum(self.tri, 0)], len(self.objects))
        return inst[obj]


def rasterize_gbuffer(objects: list[SceneObject], intr: PinholeIntrinsics, clip: ClipPlanes,
                      pose: CameraPose) -> GBuffer:
    geo = _setup(objects, intr, clip, pose)
    h, w = intr.height, intr.width
    depth = np.full((h, w), np.inf)
    tri = np.full((h, w), -1, dtype=np.int32)
    b0 = np.zeros((h, w))
    b1 = np.zeros((h, w))
    if len(geo.clip):
        _raster_kernel(np.ascontiguousarray(geo.clip), w, h, depth, tri, b0, b1)
    return GBuffer(tri, b0, b1, depth, geo, objects)


def _atlas(objects: list[SceneObject]):
    offs, ws, hs, chunks = [], [], [], []
    off = 0
    for o in objects:
        tex = np.asarray(o.texture, dtype=np.float64)
        if tex.ndim == 1:
            tex = tex.reshape(1, 1, 3)
        offs.append(off)
        hs.append(tex.shape[0])
        ws.append(tex.shape[1])
        chunks.append(np.ascontiguousarray(tex[..., :3]).ravel())
        off += chunks[-1].size
    atlas = np.concatenate(chunks) if chunks else np.zeros(3)
    return atlas, np.array(offs, dtype=np.int64), np.array(ws, dtype=np.int64), np.array(hs, dtype=np.int64)


def shade(gbuf: GBuffer, lights: list[PointLight], cam_center, ambient: float = AMBIENT,
          exposure: float = EXPOSURE, emission: np.ndarray | None = None,
          need: np.ndarray | None = None) -> np.ndarray:
    """Shade a G-buffer.

    ``emission`` (n_objects, 3), if given, replaces texturing and lighting
    with a constant colour per object (NaN rows keep normal shading).
    """
    objs = gbuf.objects
    h, w = gbuf.tri.shape
    out = np.zeros((h, w, 3))
    if not objs:
        return out
    atlas, off, tw, th = _atlas(objs)
    if emission is None:
        emissive = np.zeros(len(objs), dtype=np.bool_)
        em = np.zeros((len(objs), 3))
    else:
        em = np.asarray(emission, dtype=np.float64).reshape(len(objs), 3)
        emissive = ~np.isnan(em).any(axis=1)
        em = np.nan_to_num(em)
    if need is None:
        need = np.ones((h, w), dtype=np.bool_)
    lpos = np.array([l.position for l in lights], dtype=np.float64).reshape(-1, 3)
    lint = np.array([l.intensity for l in lights], dtype=np.float64)
    lcol = np.array([l.color for l in lights], dtype=np.float64).reshape(-1, 3)
    g = gbuf.geometry
    _shade_kernel(gbuf.tri, gbuf.b0, gbuf.b1, need, g.uv, g.wpos, g.nrm, g.obj,
                  atlas, off, tw, th, emissive, em, lpos, lint, lcol,
                  np.asarray(cam_center, dtype=np.float64), float(ambient), float(exposure), out)
    return out


def rasterize(scene: Scene, intr: PinholeIntrinsics, clip: ClipPlanes, pose: CameraPose,
              supersample: int = 1, ambient: float = AMBIENT, exposure: float = EXPOSURE) -> np.ndarray:
    """Pinhole render of ``scene`` at ``supersample`` times the intrinsics' resolution."""
    if supersample < 1:
        raise ValueError("supersample must be >= 1")
    gi = intr.scaled(supersample) if supersample > 1 else intr
    gbuf = rasterize_gbuffer(scene.all_objects(), gi, clip, pose)
    return shade(gbuf, scene.lights, pose.center, ambient, exposure)


@dataclass(frozen=True, eq=False)
class Remap:
    """Fisheye destination pixel -> canvas source coordinate."""

    canvas: PinholeIntrinsics
    source_xy: np.ndarray  # (h, w, 2)
    valid: np.ndarray  # (h, w) bool
    failures: int  # pixels where undistortion did not converge


def _camera_key(cam: FisheyeCamera):
    i, d = cam.intrinsics, cam.distortion
    return (i.fx, i.fy, i.cx, i.cy, i.width, i.height, d.k1, d.k2, d.k3, d.k4, d.skew, cam.theta_max)


@lru_cache(maxsize=32)
def _fisheye_rays(key):
    fx, fy, cx, cy, w, h, k1, k2, k3, k4, skew, theta_max = key
    intr = PinholeIntrinsics(fx, fy, cx, cy, w, h)
    dist = FisheyeDistortion(k1, k2, k3, k4, skew)
    jj, ii = np.mgrid[0:h, 0:w]
    pix = np.stack([ii, jj], axis=-1).astype(np.float64)
    ab, status, _ = undistort_points(pix, intr, dist, theta_max)
    valid = status == UNDISTORT_OK
    failures = int(np.sum(status == UNDISTORT_DIVERGED))
    ab.setflags(write=False)
    valid.setflags(write=False)
    return ab, valid, failures


def canvas_intrinsics(cam: FisheyeCamera, supersample: int = 2) -> PinholeIntrinsics:
    """Pinhole canvas covering every valid fisheye ray of ``cam``.

    The canvas has the fisheye image's pixel count times ``supersample`` per
    axis, square pixels and a one-pixel margin (before supersampling).
    """
    ab, valid, _ = _fisheye_rays(_camera_key(cam))
    w, h = cam.intrinsics.width, cam.intrinsics.height
    if not valid.any():
        base = PinholeIntrinsics(1.0, 1.0, (w - 1) / 2, (h - 1) / 2, w, h)
        return base.scaled(supersample)
    a, b = ab[..., 0][valid], ab[..., 1][valid]
    amin, amax, bmin, bmax = a.min(), a.max(), b.min(), b.max()
    span_a = max(amax - amin, 1e-9)
    span_b = max(bmax - bmin, 1e-9)
    f = min((w - 3) / span_a, (h - 3) / span_b) if min(w, h) > 3 else min(w / span_a, h / span_b)
    cx = (w - 1) / 2 - f * 0.5 * (amin + amax)
    cy = (h - 1) / 2 - f * 0.5 * (bmin + bmax)
    return PinholeIntrinsics(f, f, cx, cy, w, h).scaled(supersample)


def fisheye_remap(cam: FisheyeCamera, src_intr: PinholeIntrinsics) -> Remap:
    ab, valid, failures = _fisheye_rays(_camera_key(cam))
    sxy = np.empty(ab.shape)
    sxy[..., 0] = src_intr.fx * ab[..., 0] + src_intr.cx
    sxy[..., 1] = src_intr.fy * ab[..., 1] + src_intr.cy
    return Remap(src_intr, sxy, np.ascontiguousarray(valid), failures)


def fisheye_warp(src: np.ndarray, cam: FisheyeCamera, src_intr: PinholeIntrinsics | None = None,
                 remap: Remap | None = None) -> np.ndarray:
    """Resample a pinhole render into ``cam``'s fisheye image.

    ``src_intr`` are the intrinsics ``src`` was rendered with; by default the
    canvas for ``cam`` at the supersampling implied by ``src``'s size.
    Pixels whose ray exceeds ``theta_max`` come out black.
    """
    src = np.asarray(src, dtype=np.float64)
    squeeze = src.ndim == 2
    if squeeze:
        src = src[..., None]
    if remap is None:
        if src_intr is None:
            s = src.shape[1] // cam.intrinsics.width
            src_intr = canvas_intrinsics(cam, s)
        remap = fisheye_remap(cam, src_intr)
    if remap.failures:
        log.warning("%d fisheye pixels failed to undistort and were left black", remap.failures)
    out = np.zeros(remap.valid.shape + (src.shape[2],))
    _warp_kernel(np.ascontiguousarray(src), remap.source_xy, remap.valid, out)
    return out[..., 0] if squeeze else out


def warp_instance_ids(ids: np.ndarray, remap: Remap) -> np.ndarray:
    """Fisheye object-id image: the id covering more than half a pixel's bilinear weight."""
    out = np.full(remap.valid.shape, -1, dtype=np.int64)
    _vote_kernel(np.ascontiguousarray(ids, dtype=np.int64), remap.source_xy, remap.valid, out)
    return out


def needed_pixels(remap: Remap) -> np.ndarray:
    c = remap.canvas
    need = np.zeros((c.height, c.width), dtype=np.bool_)
    _need_kernel(remap.source_xy, remap.valid, c.width, c.height, need)
    return need


@dataclass(eq=False)
class RenderResult:
    image: np.ndarray  # fisheye RGB
    gbuffer: GBuffer  # pinhole canvas buffers
    remap: Remap

    def instance_ids(self) -> np.ndarray:
        """Fisheye object-id image (-1 for background)."""
        return warp_instance_ids(self.gbuffer.instance_ids(), self.remap)


def render_frame(scene: Scene, cam: FisheyeCamera, supersample: int = 2, ambient: float = AMBIENT,
                 exposure: float = EXPOSURE, emission: np.ndarray | None = None,
                 lights: bool = True) -> RenderResult:
    if supersample < 1:
        raise ValueError("supersample must be >= 1")
    canvas = canvas_intrinsics(cam, supersample)
    remap = fisheye_remap(cam, canvas)
    gbuf = rasterize_gbuffer(scene.all_objects(), canvas, cam.clip, cam.pose)
    need = needed_pixels(remap)
    img = shade(gbuf, scene.lights if lights else [], cam.pose.center, ambient, exposure,
                emission=emission, need=need)
    return RenderResult(fisheye_warp(img, cam, remap=remap), gbuf, remap)


def render_scene(scene: Scene, cam: FisheyeCamera | None = None, supersample: int = 2,
                 ambient: float = AMBIENT, exposure: float = EXPOSURE) -> np.ndarray:
    """Rasterize through the pinhole canvas, then warp to the fisheye image."""
    cam = cam if cam is not None else scene.camera
    if cam is None:
        raise ValueError("no camera given and scene has none")
    return render_frame(scene, cam, supersample, ambient, exposure).image


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
