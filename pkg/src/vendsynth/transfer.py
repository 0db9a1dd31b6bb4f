"""Evaluators for the masked style-transfer objective.

No networks live here: the caller supplies the translated images, the cycle
reconstructions and the discriminator scores, and these functions score
them. Images are float arrays in [0, 1] of shape ``(n, h, w, 3)`` (a single
``(h, w, 3)`` image is promoted to a batch of one); masks are boolean
``(n, h, w)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .assets import load_texture

SEGMENT_THRESHOLD = 0.08


@dataclass(frozen=True, eq=False)
class MaskPair:
    fg: np.ndarray
    bg: np.ndarray

    def __post_init__(self):
        fg = np.asarray(self.fg, dtype=bool)
        bg = np.asarray(self.bg, dtype=bool)
        if fg.shape != bg.shape:
            raise ValueError(f"mask shapes differ: {fg.shape} vs {bg.shape}")
        if np.any(fg & bg) or not np.all(fg | bg):
            raise ValueError("foreground and background masks must partition the image")
        object.__setattr__(self, "fg", fg)
        object.__setattr__(self, "bg", bg)

    @classmethod
    def from_foreground(cls, fg: np.ndarray) -> MaskPair:
        fg = np.asarray(fg, dtype=bool)
        return cls(fg, ~fg)


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 10.0  # cycle consistency
    lambda2: float = 3.0  # background
    lambda3: float = 7.0  # foreground

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


@dataclass(frozen=True)
class DiscriminatorScores:
    """Probabilities in (0, 1) that an input is real, per sample."""

    dy_real: np.ndarray  # D_Y(y)
    dy_fake: np.ndarray  # D_Y(G(x))
    dx_real: np.ndarray  # D_X(x)
    dx_fake: np.ndarray  # D_X(F(y))

    def __post_init__(self):
        for name in ("dy_real", "dy_fake", "dx_real", "dx_fake"):
            v = np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64))
            if not np.all(np.isfinite(v)):
                raise ValueError(f"discriminator score {name} must be finite")
            if np.any((v <= 0) | (v >= 1)):
                raise ValueError(f"discriminator score {name} must lie strictly inside (0, 1)")
            object.__setattr__(self, name, v)


def _batch(img, name: str) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3:
        a = a[None]
    if a.ndim != 4 or a.shape[-1] != 3:
        raise ValueError(f"{name} must have shape (n, h, w, 3) or (h, w, 3), got {a.shape}")
    return a


def _mask_batch(m, name: str) -> np.ndarray:
    a = np.asarray(m, dtype=bool)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError(f"{name} must have shape (n, h, w) or (h, w), got {a.shape}")
    return a


@dataclass(frozen=True, eq=False)
class TransferBatch:
    """``x`` virtual images, ``y`` real images, their translations and cycles.

    ``gx = G(x)``, ``fy = F(y)``, ``fgx = F(G(x))``, ``gfy = G(F(y))``.
    ``masks_x`` / ``masks_y`` are the foreground masks of ``x`` and ``y``.
    """

    x: np.ndarray
    y: np.ndarray
    gx: np.ndarray
    fy: np.ndarray
    masks_x: np.ndarray
    masks_y: np.ndarray
    fgx: np.ndarray | None = None
    gfy: np.ndarray | None = None
    scores: DiscriminatorScores | None = None

    def __post_init__(self):
        for name in ("x", "y", "gx", "fy", "fgx", "gfy"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _batch(v, name))
        for name in ("masks_x", "masks_y"):
            m = getattr(self, name)
            if isinstance(m, MaskPair):
                m = m.fg
            object.__setattr__(self, name, _mask_batch(m, name))
        shape = self.x.shape
        for name in ("y", "gx", "fy", "fgx", "gfy"):
            v = getattr(self, name)
            if v is not None and v.shape != shape:
                raise ValueError(f"{name} has shape {v.shape}, expected {shape}")
        for name in ("masks_x", "masks_y"):
            if getattr(self, name).shape != shape[:3]:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape[:3]}")


def segment_foreground(image: np.ndarray, clean_background: np.ndarray,
                       threshold: float = SEGMENT_THRESHOLD) -> MaskPair:
    """Foreground by differencing against an object-free capture.

    A pixel is foreground when its largest per-channel absolute difference
    exceeds ``threshold``; one 3x3 majority pass (at least 5 of 9, pixels
    outside the image count as background) then removes speckle.
    """
    a = np.asarray(image, dtype=np.float64)
    b = np.asarray(clean_background, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image {a.shape} and clean background {b.shape} differ in size")
    diff = np.abs(a - b)
    if diff.ndim == 3:
        diff = diff.max(axis=-1)
    raw = diff > threshold
    votes = ndimage.convolve(raw.astype(np.int32), np.ones((3, 3), dtype=np.int32), mode="constant", cval=0)
    return MaskPair.from_foreground(votes >= 5)


def synthetic_masks(instance_ids: np.ndarray) -> MaskPair:
    """Masks of a rendered frame straight from its object-id image."""
    return MaskPair.from_foreground(np.asarray(instance_ids) >= 0)


def rgb_to_hsv(image: np.ndarray) -> np.ndarray:
    """Hexcone HSV with every channel in [0, 1]; hue is 0 for greys."""
    rgb = np.asarray(image, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    s = np.divide(c, v, out=np.zeros_like(v), where=v > 0)
    safe = np.where(c > 0, c, 1.0)
    h = np.where(v == r, ((g - b) / safe) % 6.0,
                 np.where(v == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0))
    h = np.where(c > 0, h / 6.0, 0.0)
    h = np.where(h >= 1.0, h - 1.0, h)
    return np.stack([h, s, v], axis=-1)


def hue_difference(h1: np.ndarray, h0: np.ndarray) -> np.ndarray:
    """``h1 - h0`` on the unit hue circle, wrapped to [-0.5, 0.5]."""
    d = np.asarray(h1, dtype=np.float64) - np.asarray(h0, dtype=np.float64)
    return d - np.round(d)


def _masked_norms(diff: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Entrywise L2 norm of ``diff * mask`` per sample."""
    if diff.ndim == 4:
        masked = diff * mask[..., None]
    else:
        masked = diff * mask
    return np.sqrt(np.sum(masked.reshape(len(masked), -1) ** 2, axis=1))


def loss_fg(batch: TransferBatch) -> float:
    """Hue-only identity constraint on foreground pixels, both domains."""
    hx = hue_difference(rgb_to_hsv(batch.gx)[..., 0], rgb_to_hsv(batch.x)[..., 0])
    hy = hue_difference(rgb_to_hsv(batch.fy)[..., 0], rgb_to_hsv(batch.y)[..., 0])
    per = _masked_norms(hx, batch.masks_x) + _masked_norms(hy, batch.masks_y)
    return float(per.mean())


def loss_bg(batch: TransferBatch) -> float:
    """RGB identity constraint on background pixels, both domains."""
    per = _masked_norms(batch.gx - batch.x, ~batch.masks_x) + _masked_norms(batch.fy - batch.y, ~batch.masks_y)
    return float(per.mean())


def adversarial_nll(real: np.ndarray, fake: np.ndarray) -> float:
    """``-E[log D(real)] - E[log(1 - D(fake))]``."""
    return float(-np.mean(np.log(real)) - np.mean(np.log1p(-fake)))


def cycle_l1(batch: TransferBatch) -> float:
    if batch.fgx is None or batch.gfy is None:
        raise ValueError("cycle reconstructions fgx and gfy are required")
    return float(np.mean(np.abs(batch.fgx - batch.x)) + np.mean(np.abs(batch.gfy - batch.y)))


def loss_style(batch: TransferBatch, lambda1: float = LossWeights.lambda1) -> float:
    if batch.scores is None:
        raise ValueError("discriminator scores are required for the style loss")
    s = batch.scores
    gan = adversarial_nll(s.dy_real, s.dy_fake) + adversarial_nll(s.dx_real, s.dx_fake)
    if lambda1 == 0:
        return gan
    return gan + lambda1 * cycle_l1(batch)


def combine_losses(style: float, bg: float, fg: float, weights: LossWeights = LossWeights()) -> float:
    """Object-detection objective from its parts; ``style`` already carries lambda1."""
    return style + weights.lambda2 * bg + weights.lambda3 * fg


def loss_od(batch: TransferBatch, weights: LossWeights = LossWeights()) -> float:
    return combine_losses(loss_style(batch, weights.lambda1), loss_bg(batch), loss_fg(batch), weights)


def evaluate(batch: TransferBatch, weights: LossWeights = LossWeights()) -> dict[str, float]:
    style = loss_style(batch, weights.lambda1)
    bg, fg = loss_bg(batch), loss_fg(batch)
    return {"style": style, "bg": bg, "fg": fg, "od": combine_losses(style, bg, fg, weights)}


# ---------------------------------------------------------------------------
# mask and batch files


def save_mask(mask: np.ndarray, path: str | Path) -> None:
    PILImage.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)).save(path)


def load_mask(path: str | Path) -> np.ndarray:
    with PILImage.open(path) as im:
        return np.asarray(im.convert("L")) > 127


SAMPLE_IMAGES = ("x", "y", "gx", "fy", "fgx", "gfy")
SAMPLE_MASKS = ("mask_x", "mask_y")
SAMPLE_SCORES = "scores.json"


def _load_sample(d: Path) -> dict:
    missing = [f"{n}.png" for n in SAMPLE_IMAGES + SAMPLE_MASKS if not (d / f"{n}.png").exists()]
    if missing or not (d / SAMPLE_SCORES).exists():
        raise FileNotFoundError(f"{d}: missing {', '.join(missing + ([] if (d / SAMPLE_SCORES).exists() else [SAMPLE_SCORES]))}")
    out = {n: load_texture(d / f"{n}.png") for n in SAMPLE_IMAGES}
    out.update({n: load_mask(d / f"{n}.png") for n in SAMPLE_MASKS})
    scores = json.loads((d / SAMPLE_SCORES).read_text(encoding="utf-8"))
    out.update({k: float(scores[k]) for k in ("dy_real", "dy_fake", "dx_real", "dx_fake")})
    return out


def load_batch(directory: str | Path) -> TransferBatch:
    """Read a batch directory.

    Each sample is a folder holding ``x.png y.png gx.png fy.png fgx.png
    gfy.png`` (RGB), ``mask_x.png mask_y.png`` (foreground, white = 1) and
    ``scores.json`` with keys ``dy_real dy_fake dx_real dx_fake``. The
    directory is either one sample or contains sample folders, read in
    name order.
    """
    root = Path(directory)
    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    samples = [_load_sample(d) for d in subdirs] if subdirs else [_load_sample(root)]
    stack = {k: np.stack([s[k] for s in samples]) for k in samples[0]}
    return TransferBatch(
        x=stack["x"], y=stack["y"], gx=stack["gx"], fy=stack["fy"],
        masks_x=stack["mask_x"], masks_y=stack["mask_y"], fgx=stack["fgx"], gfy=stack["gfy"],
        scores=DiscriminatorScores(stack["dy_real"], stack["dy_fake"], stack["dx_real"], stack["dx_fake"]),
    )
