"""Fisheye camera model on top of a pinhole projection.

Camera frame: x right, y down, z forward (optical axis). Pixel coordinates
address pixel centres, so pixel ``(i, j)`` sits at continuous ``(i, j)``.

Distortion is the polynomial equidistant model: a ray at angle ``theta``
from the axis lands at normalized radius
``theta_d = theta * (1 + k1 theta^2 + k2 theta^4 + k3 theta^6 + k4 theta^8)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np
from scipy.spatial.transform import Rotation


class UndistortError(ArithmeticError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3g})")
        self.residual = residual


@dataclass(frozen=True)
class PinholeIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if not (math.isfinite(self.cx) and math.isfinite(self.cy)):
            raise ValueError("principal point must be finite")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, s: int) -> PinholeIntrinsics:
        """Same view rendered with ``s`` x ``s`` pixels per original pixel."""
        return PinholeIntrinsics(
            self.fx * s, self.fy * s, (self.cx + 0.5) * s - 0.5, (self.cy + 0.5) * s - 0.5,
            self.width * s, self.height * s,
        )


@dataclass(frozen=True)
class FisheyeDistortion:
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    k4: float = 0.0
    skew: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.k1, self.k2, self.k3, self.k4, self.skew)):
            raise ValueError("distortion coefficients must be finite")

    @property
    def k(self) -> tuple[float, float, float, float]:
        return (self.k1, self.k2, self.k3, self.k4)

    def theta_d(self, theta):
        t2 = theta * theta
        return theta * (1 + t2 * (self.k1 + t2 * (self.k2 + t2 * (self.k3 + t2 * self.k4))))

    def dtheta_d(self, theta):
        t2 = theta * theta
        return 1 + t2 * (3 * self.k1 + t2 * (5 * self.k2 + t2 * (7 * self.k3 + t2 * 9 * self.k4)))


@dataclass(frozen=True)
class ClipPlanes:
    near: float = 0.01
    far: float = 10.0

    def __post_init__(self):
        if not 0 < self.near < self.far:
            raise ValueError(f"need 0 < near < far, got near={self.near}, far={self.far}")


@dataclass(frozen=True, eq=False)
class CameraPose:
    """World-to-camera rotation and the camera centre in world coordinates.

    ``x_cam = rotation @ (x_world - center)``.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        c = np.array(self.center, dtype=np.float64).reshape(3)
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9) or np.linalg.det(r) < 0:
            raise ValueError("camera rotation must be a proper rotation")
        r.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "center", c)

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.center) @ self.rotation.T

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, -1.0)) -> CameraPose:
        """Camera at ``eye`` looking at ``target``; ``up`` maps to image-up (-y)."""
        eye, target, up = (np.asarray(v, dtype=float) for v in (eye, target, up))
        z = target - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, up)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        return cls(np.vstack([x, y, z]), eye)


@dataclass(frozen=True, eq=False)
class FisheyeCamera:
    intrinsics: PinholeIntrinsics
    distortion: FisheyeDistortion = field(default_factory=FisheyeDistortion)
    pose: CameraPose = field(default_factory=CameraPose)
    clip: ClipPlanes = field(default_factory=ClipPlanes)
    theta_max: float = math.radians(75.0)

    def __post_init__(self):
        if not 0 < self.theta_max < math.pi / 2:
            raise ValueError("theta_max must lie in (0, pi/2)")
        check_monotonic(self.distortion, self.theta_max)

    def to_dict(self) -> dict:
        i, d = self.intrinsics, self.distortion
        return {
            "fx": i.fx, "fy": i.fy, "cx": i.cx, "cy": i.cy, "width": i.width, "height": i.height,
            "k": list(d.k), "skew": d.skew,
            "rotation": self.pose.rotation.tolist(), "center": self.pose.center.tolist(),
            "near": self.clip.near, "far": self.clip.far, "theta_max": self.theta_max,
        }


def check_monotonic(dist: FisheyeDistortion, theta_max: float, samples: int = 2048) -> None:
    """Raise ``ValueError`` unless ``theta_d`` strictly increases on [0, theta_max]."""
    theta = np.linspace(0.0, theta_max, samples)
    deriv = dist.dtheta_d(theta)
    if np.any(deriv <= 0):
        bad = theta[np.argmax(deriv <= 0)]
        raise ValueError(
            f"distortion {dist.k} is not monotonic: d theta_d / d theta <= 0 at theta={bad:.4f} rad"
        )


def projection_matrix(intr: PinholeIntrinsics, clip: ClipPlanes) -> np.ndarray:
    """OpenGL-style 4x4 projection built from pinhole intrinsics and clip planes."""
    w, h = float(intr.width), float(intr.height)
    n, f = clip.near, clip.far
    m = np.zeros((4, 4))
    m[0, 0] = 2 * intr.fx / w
    m[0, 2] = -2 * (intr.cx - w / 2) / w
    m[1, 1] = 2 * intr.fy / h
    m[1, 2] = -2 * (intr.cy - h / 2) / h
    m[2, 2] = -(n + f) / (f - n)
    m[2, 3] = -2 * n * f / (f - n)
    m[3, 2] = -1.0
    return m


def unproject(pixel, intr: PinholeIntrinsics) -> np.ndarray:
    """Camera-space direction ``K^-1 (px, py, 1)`` with z = 1."""
    p = np.asarray(pixel, dtype=np.float64)
    x = (p[..., 0] - intr.cx) / intr.fx
    y = (p[..., 1] - intr.cy) / intr.fy
    return np.stack([x, y, np.ones_like(x)], axis=-1)


def distort(
    direction,
    intr: PinholeIntrinsics,
    dist: FisheyeDistortion,
    theta_max: float | None = None,
    printed_form: bool = False,
) -> np.ndarray:
    """Project camera-space directions to distorted pixels ``(p_u, p_v)``.

    ``printed_form=True`` evaluates the variant that uses ``a^2 + b^2`` in
    place of the radius (``theta = atan(a^2 + b^2)``, ``x' = a theta_d /
    (a^2 + b^2)``) and multiplies ``y'`` by the normalized ``a`` instead of
    the skew. It exists for comparison only.
    """
    d = np.asarray(direction, dtype=np.float64)
    z = d[..., 2]
    if np.any(z <= 0):
        raise ValueError("direction must have positive z")
    a = d[..., 0] / z
    b = d[..., 1] / z
    if printed_form:
        r = a * a + b * b
    else:
        r = np.hypot(a, b)
    theta = np.arctan(r)
    if theta_max is not None and np.any(np.arctan(np.hypot(a, b)) > theta_max):
        raise ValueError(f"ray beyond theta_max={theta_max:.4f} rad")
    td = dist.theta_d(theta)
    scale = np.divide(td, r, out=np.zeros_like(td), where=r > 0)
    xp = a * scale
    yp = b * scale
    if printed_form:
        pu = intr.fx * (xp + a * yp) + intr.cx
    else:
        pu = intr.fx * (xp + dist.skew * yp) + intr.cx
    pv = intr.fy * yp + intr.cy
    return np.stack([pu, pv], axis=-1)


@numba.njit(cache=True)
def _undistort_kernel(xp, yp, k1, k2, k3, k4, td_max, theta_limit, max_iter, tol, ab, status, residual):
    for idx in range(xp.shape[0]):
        x, y = xp[idx], yp[idx]
        td = math.sqrt(x * x + y * y)
        ab[idx, 0] = 0.0
        ab[idx, 1] = 0.0
        residual[idx] = 0.0
        if td == 0.0:
            status[idx] = 0
            continue
        if td > td_max:
            status[idx] = 1
            continue
        th = td
        t2 = th * th
        res = th * (1 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4)))) - td
        it = 0
        while abs(res) > tol and it < max_iter:
            t2 = th * th
            deriv = 1 + t2 * (3 * k1 + t2 * (5 * k2 + t2 * (7 * k3 + t2 * 9 * k4)))
            if deriv == 0.0:
                break
            step = res / deriv
            alpha = 1.0
            new = th - step
            t2 = new * new
            new_res = new * (1 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4)))) - td
            halvings = 0
            while abs(new_res) > abs(res) and halvings < 30:
                alpha *= 0.5
                new = th - alpha * step
                t2 = new * new
                new_res = new * (1 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4)))) - td
                halvings += 1
            th, res = new, new_res
            it += 1
        residual[idx] = res
        if not abs(res) <= tol:
            status[idx] = 2
            continue
        if th < 0.0 or th > theta_limit:
            status[idx] = 1
            continue
        s = math.tan(th) / td
        ab[idx, 0] = x * s
        ab[idx, 1] = y * s
        status[idx] = 0


UNDISTORT_OK, UNDISTORT_OUTSIDE, UNDISTORT_DIVERGED = 0, 1, 2


def undistort_points(pixels, intr: PinholeIntrinsics, dist: FisheyeDistortion,
                     theta_max: float | None = None, max_iter: int = 20, tol: float = 1e-10):
    """Vectorized inverse of :func:`distort`.

    ``theta`` is recovered from ``theta_d`` by damped Newton iteration
    starting at ``theta = theta_d``. Returns ``(ab, status, residual)`` where
    status is ``UNDISTORT_OK``, ``UNDISTORT_OUTSIDE`` (ray beyond
    ``theta_max``) or ``UNDISTORT_DIVERGED``; ``ab`` is 0 where not OK.
    """
    p = np.asarray(pixels, dtype=np.float64)
    shape = p.shape[:-1]
    yp = (p[..., 1] - intr.cy) / intr.fy
    xp = (p[..., 0] - intr.cx) / intr.fx - dist.skew * yp
    if theta_max is None:
        td_max, limit = math.inf, math.pi / 2 - 1e-9
    else:
        td_max, limit = float(dist.theta_d(theta_max)), float(theta_max)
    n = int(np.prod(shape))
    ab = np.empty((n, 2))
    status = np.empty(n, dtype=np.int8)
    res = np.empty(n)
    _undistort_kernel(np.ascontiguousarray(xp, dtype=np.float64).ravel(),
                      np.ascontiguousarray(yp, dtype=np.float64).ravel(),
                      dist.k1, dist.k2, dist.k3, dist.k4, td_max, limit, max_iter, tol, ab, status, res)
    return ab.reshape(shape + (2,)), status.reshape(shape), res.reshape(shape)


def undistort(pixel, intr: PinholeIntrinsics, dist: FisheyeDistortion,
              theta_max: float | None = None) -> np.ndarray:
    """Normalized undistorted coordinates ``(a, b)`` of distorted pixels.

    Raises ``UndistortError`` if Newton iteration fails or the ray lies
    beyond ``theta_max``.
    """
    ab, status, res = undistort_points(pixel, intr, dist, theta_max)
    if np.any(status == UNDISTORT_DIVERGED):
        worst = float(np.max(np.abs(np.where(status == UNDISTORT_DIVERGED, res, 0.0))))
        raise UndistortError("Newton iteration did not converge", worst)
    if np.any(status == UNDISTORT_OUTSIDE):
        raise UndistortError("ray lies outside the valid field of view", 0.0)
    return ab


@dataclass(frozen=True)
class PerturbationRanges:
    focal: float = 0.05  # relative
    principal_point: float = 10.0  # pixels
    distortion: float = 0.02  # relative
    position: float = 0.02  # meters
    orientation_deg: float = 2.0  # per Euler axis

    def __post_init__(self):
        for name in ("focal", "principal_point", "distortion", "position", "orientation_deg"):
            if getattr(self, name) < 0:
                raise ValueError(f"perturbation range {name} must be non-negative")


def perturb_intrinsics(base: FisheyeCamera, ranges: PerturbationRanges, rng: np.random.Generator) -> FisheyeCamera:
    """Jitter the calibrated camera: focal, principal point, distortion and pose."""
    i, d = base.intrinsics, base.distortion
    f = rng.uniform(-ranges.focal, ranges.focal, size=2)
    c = rng.uniform(-ranges.principal_point, ranges.principal_point, size=2)
    k = rng.uniform(-ranges.distortion, ranges.distortion, size=4)
    dp = rng.uniform(-ranges.position, ranges.position, size=3)
    ang = rng.uniform(-ranges.orientation_deg, ranges.orientation_deg, size=3)
    intr = replace(i, fx=i.fx * (1 + f[0]), fy=i.fy * (1 + f[1]), cx=i.cx + c[0], cy=i.cy + c[1])
    dist = replace(d, k1=d.k1 * (1 + k[0]), k2=d.k2 * (1 + k[1]), k3=d.k3 * (1 + k[2]), k4=d.k4 * (1 + k[3]))
    jitter = Rotation.from_euler("xyz", ang, degrees=True).as_matrix()
    pose = CameraPose(jitter @ base.pose.rotation, base.pose.center + dp)
    return replace(base, intrinsics=intr, distortion=dist, pose=pose)
