"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation


def arap_oracle(rest: np.ndarray, edges: list[tuple[int, int]], handles: dict[int, np.ndarray],
                fixed: set[int]) -> np.ndarray:
    """Pure edge-rigidity energy minimized by L-BFGS over free positions.

    ``edges`` lists directed pairs (i, j) with j in N(i). Rotations come from
    the Kabsch fit of ``Rotation.align_vectors``; by the envelope theorem the
    gradient with the rotations held at their optimum is the true gradient.
    """
    n = len(rest)
    free = np.array([i for i in range(n) if i not in fixed])
    nbrs = [[j for (a, j) in edges if a == i] for i in range(n)]

    def unpack(z):
        x = rest.copy()
        x[free] = z.reshape(-1, 3)
        return x

    def fun(z):
        x = unpack(z)
        e, g = 0.0, np.zeros_like(x)
        for i in range(n):
            if not nbrs[i]:
                continue
            e0 = np.array([rest[i] - rest[j] for j in nbrs[i]])
            e1 = np.array([x[i] - x[j] for j in nbrs[i]])
            rot = Rotation.align_vectors(e1, e0)[0].as_matrix()
            for k, j in enumerate(nbrs[i]):
                r = e1[k] - rot @ e0[k]
                e += r @ r
                g[i] += 2 * r
                g[j] -= 2 * r
        for h, c in handles.items():
            d = x[h] - c
            e += d @ d
            g[h] += 2 * d
        return e, g[free].ravel()

    res = minimize(fun, rest[free].ravel(), jac=True, method="L-BFGS-B",
                   options={"ftol": 1e-30, "gtol": 1e-13, "maxiter": 20000, "maxcor": 30})
    return unpack(res.x)


def fisheye_pixel(a: float, b: float, fx: float, fy: float, cx: float, cy: float,
                  k=(0.0, 0.0, 0.0, 0.0), skew: float = 0.0) -> tuple[float, float]:
    """Scalar equidistant projection of the normalized point (a, b)."""
    r = math.hypot(a, b)
    theta = math.atan(r)
    td = theta * (1 + k[0] * theta**2 + k[1] * theta**4 + k[2] * theta**6 + k[3] * theta**8)
    s = td / r if r > 0 else 1.0
    xp, yp = a * s, b * s
    return fx * (xp + skew * yp) + cx, fy * yp + cy


def halfspace_coverage(tri_px: np.ndarray, width: int, height: int) -> np.ndarray:
    """Pixels whose centre lies strictly inside the screen-space triangle."""
    (x0, y0), (x1, y1), (x2, y2) = tri_px
    out = np.zeros((height, width), dtype=bool)
    area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
    sign = 1.0 if area > 0 else -1.0
    for j in range(height):
        for i in range(width):
            e0 = ((x2 - x1) * (j - y1) - (y2 - y1) * (i - x1)) * sign
            e1 = ((x0 - x2) * (j - y2) - (y0 - y2) * (i - x2)) * sign
            e2 = ((x1 - x0) * (j - y0) - (y1 - y0) * (i - x0)) * sign
            out[j, i] = e0 > 0 and e1 > 0 and e2 > 0
    return out


def min_edge_distance(tri_px: np.ndarray, width: int, height: int) -> float:
    """Smallest distance from any pixel centre to a triangle edge line segment."""
    jj, ii = np.mgrid[0:height, 0:width]
    p = np.stack([ii.ravel(), jj.ravel()], axis=1).astype(float)
    best = np.inf
    for k in range(3):
        a, b = tri_px[k], tri_px[(k + 1) % 3]
        ab = b - a
        t = np.clip(((p - a) @ ab) / (ab @ ab), 0, 1)
        d = np.linalg.norm(p - (a + t[:, None] * ab), axis=1)
        best = min(best, d.min())
    return float(best)


def bilinear(img: np.ndarray, x: float, y: float, clamp: bool) -> np.ndarray:
    """Bilinear sample at continuous pixel (x, y), pixel centres at integers.

    ``clamp`` repeats edge pixels; otherwise samples outside are zero.
    """
    h, w = img.shape[:2]
    if clamp:
        x = min(max(x, 0.0), w - 1.0)
        y = min(max(y, 0.0), h - 1.0)
    x0, y0 = math.floor(x), math.floor(y)
    fx, fy = x - x0, y - y0
    acc = np.zeros(img.shape[2:])
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            xi, yi = x0 + dx, y0 + dy
            if clamp:
                xi, yi = min(xi, w - 1), min(yi, h - 1)
            if 0 <= xi < w and 0 <= yi < h:
                acc = acc + wx * wy * img[yi, xi]
    return acc


def equidistant_remap(src: np.ndarray, fx: float, fy: float, cx: float, cy: float, width: int,
                      height: int, theta_max: float, canvas: tuple[float, float, float, float]) -> np.ndarray:
    """Per-pixel warp of a pinhole image to the undistorted equidistant fisheye.

    ``canvas`` holds the source image's ``(fx, fy, cx, cy)``.
    """
    sfx, sfy, scx, scy = canvas
    out = np.zeros((height, width) + src.shape[2:])
    for j in range(height):
        for i in range(width):
            xd, yd = (i - cx) / fx, (j - cy) / fy
            theta = math.hypot(xd, yd)
            if theta > theta_max:
                continue
            if theta == 0:
                a = b = 0.0
            else:
                s = math.tan(theta) / theta
                a, b = xd * s, yd * s
            out[j, i] = bilinear(src, sfx * a + scx, sfy * b + scy, clamp=False)
    return out


def grid_incircle(rect, centers, radii, step: float = 1e-3) -> float:
    """Largest clearance over a ``step`` lattice of the rectangle."""
    xs = np.arange(rect.xmin, rect.xmax + step / 2, step)
    zs = np.arange(rect.zmin, rect.zmax + step / 2, step)
    px, pz = np.meshgrid(xs, zs)
    d = np.minimum(np.minimum(px - rect.xmin, rect.xmax - px), np.minimum(pz - rect.zmin, rect.zmax - pz))
    for (cx, cz), r in zip(centers, radii):
        d = np.minimum(d, np.hypot(px - cx, pz - cz) - r)
    return float(d.max())
