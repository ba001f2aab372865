"""View augmentation for contrastive training of tactile frames.

The pipeline that forms a positive pair is: random rotation, random
vertical flip, random-position crop, per-channel normalization.  Hue
jitter, Gaussian blur and gray-scaling are deliberately unsupported: the
tri-color relief encodes geometry in its channels, and those transforms
destroy it.

All operations take and return ``H x W x 3`` float arrays; geometry
helpers are also reused on the inference path (center crop + normalize).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .textures import TactileFrame

# Per-channel statistics of a DIGIT-style capture corpus, used to
# standardize frames before they reach the encoder.
DIGIT_NORM_MEAN = (0.37932363, 0.4131034, 0.38336082)
DIGIT_NORM_STD = (0.11476628, 0.08604312, 0.16590593)


@dataclass(frozen=True)
class AugmentConfig:
    crop_size: int
    vertical_flip_prob: float = 0.5
    rotation_prob: float = 1.0
    rotation_range: tuple[float, float] = (-180.0, 180.0)  # degrees, half-open
    normalize_mean: tuple[float, float, float] = DIGIT_NORM_MEAN
    normalize_std: tuple[float, float, float] = DIGIT_NORM_STD
    hue_jitter: bool = False
    gaussian_blur: bool = False
    grayscale: bool = False

    def __post_init__(self):
        if self.crop_size < 1:
            raise ValueError(f"crop_size must be >= 1, got {self.crop_size}")
        for name in ("vertical_flip_prob", "rotation_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        lo, hi = self.rotation_range
        if not lo < hi:
            raise ValueError(f"rotation_range must be a nonempty interval, got {self.rotation_range}")
        if any(s <= 0 for s in self.normalize_std):
            raise ValueError("normalize_std components must be > 0")
        if self.hue_jitter or self.gaussian_blur or self.grayscale:
            raise ValueError(
                "hue_jitter / gaussian_blur / grayscale are not supported for "
                "tri-color tactile frames"
            )

    @classmethod
    def desk_default(cls) -> "AugmentConfig":
        """56-px crops of the 64-px desk frames."""
        return cls(crop_size=56)

    def to_dict(self) -> dict:
        return {
            "crop_size": self.crop_size,
            "vertical_flip_prob": self.vertical_flip_prob,
            "rotation_prob": self.rotation_prob,
            "rotation_range": list(self.rotation_range),
            "normalize_mean": list(self.normalize_mean),
            "normalize_std": list(self.normalize_std),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        d = dict(d)
        for key in ("rotation_range", "normalize_mean", "normalize_std"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _pixels_of(frame) -> np.ndarray:
    if isinstance(frame, TactileFrame):
        return frame.pixels
    return np.asarray(frame)


def center_crop(frame, size: int) -> np.ndarray:
    """Central ``size x size`` window; odd margins round down."""
    px = _pixels_of(frame)
    h, w = px.shape[:2]
    if size > h or size > w:
        raise ValueError(f"crop size {size} exceeds frame dimensions {h}x{w}")
    top = (h - size) // 2
    left = (w - size) // 2
    return px[top : top + size, left : left + size].copy()


def random_crop(frame, size: int, rng: np.random.Generator) -> np.ndarray:
    px = _pixels_of(frame)
    h, w = px.shape[:2]
    if size > h or size > w:
        raise ValueError(f"crop size {size} exceeds frame dimensions {h}x{w}")
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return px[top : top + size, left : left + size].copy()


def flip_vertical(frame) -> np.ndarray:
    """Mirror rows: row r maps to row H-1-r."""
    return _pixels_of(frame)[::-1].copy()


def _rotate_exact_quarter(px: np.ndarray, quarters: int, fill: np.ndarray) -> np.ndarray:
    """Quarter-turn rotation as a pure index permutation (no interpolation).

    Valid whenever the rotated grid lands on integer pixel centers: always
    for half turns, and for quarter turns when H + W is even.  Pixels whose
    source falls outside the frame get the per-channel mean fill.
    """
    h, w = px.shape[:2]
    cr2, cc2 = h - 1, w - 1  # doubled center coordinates, kept integral
    rows, cols = np.mgrid[0:h, 0:w]
    dr2 = 2 * rows - cr2     # doubled offsets from the center
    dc2 = 2 * cols - cc2
    q = quarters % 4
    if q == 0:
        return px.copy()
    if q == 1:
        sr2, sc2 = -dc2, dr2
    elif q == 2:
        sr2, sc2 = -dr2, -dc2
    else:
        sr2, sc2 = dc2, -dr2
    src_r2 = sr2 + cr2
    src_c2 = sc2 + cc2
    # Integrality is guaranteed by the caller's H+W parity check.
    src_r = src_r2 // 2
    src_c = src_c2 // 2
    inside = (src_r >= 0) & (src_r < h) & (src_c >= 0) & (src_c < w)
    out = np.empty_like(px)
    out[:] = fill
    out[inside] = px[src_r[inside], src_c[inside]]
    return out


def rotate(frame, angle_deg: float) -> np.ndarray:
    """Rotate about the image center, keeping frame dimensions.

    Quarter-turn multiples are exact pixel permutations where the grid
    allows it; everything else is bilinear with out-of-support pixels
    filled by the frame's per-channel mean.
    """
    px = _pixels_of(frame)
    h, w = px.shape[:2]
    fill = px.reshape(-1, px.shape[2]).mean(axis=0)

    if angle_deg % 90.0 == 0.0:
        quarters = int(angle_deg // 90.0)
        if quarters % 2 == 0 or (h + w) % 2 == 0:
            return _rotate_exact_quarter(px, quarters, fill.astype(px.dtype))

    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    dr = rows - (h - 1) / 2.0
    dc = cols - (w - 1) / 2.0
    src_r = -sin_t * dc + cos_t * dr + (h - 1) / 2.0
    src_c = sin_t * dr + cos_t * dc + (w - 1) / 2.0

    out = np.empty_like(px)
    for ch in range(px.shape[2]):
        out[..., ch] = ndimage.map_coordinates(
            px[..., ch].astype(np.float64),
            [src_r, src_c],
            order=1,
            mode="constant",
            cval=float(fill[ch]),
        ).astype(px.dtype)
    return out


def normalize(frame, mean=DIGIT_NORM_MEAN, std=DIGIT_NORM_STD) -> np.ndarray:
    """Per-channel standardization: (pixel - mean) / std."""
    std = np.asarray(std, dtype=np.float32)
    if np.any(std <= 0):
        raise ValueError("std components must be > 0")
    mean = np.asarray(mean, dtype=np.float32)
    return ((_pixels_of(frame) - mean) / std).astype(np.float32)


def denormalize(frame, mean=DIGIT_NORM_MEAN, std=DIGIT_NORM_STD) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float32)
    std = np.asarray(std, dtype=np.float32)
    return (_pixels_of(frame) * std + mean).astype(np.float32)


def _augment_once(px: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    if rng.random() < cfg.rotation_prob:
        lo, hi = cfg.rotation_range
        px = rotate(px, float(rng.uniform(lo, hi)))
    if rng.random() < cfg.vertical_flip_prob:
        px = flip_vertical(px)
    px = random_crop(px, cfg.crop_size, rng)
    return normalize(px, cfg.normalize_mean, cfg.normalize_std)


def make_positive_pair(
    frame, cfg: AugmentConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Two independently augmented views of the same frame.

    Deterministic in the supplied generator state; both views go through
    the full rotation/flip/crop/normalize chain with separate draws.
    """
    px = _pixels_of(frame)
    return _augment_once(px, cfg, rng), _augment_once(px, cfg, rng)


def inference_view(frame, cfg: AugmentConfig) -> np.ndarray:
    """The deterministic path used outside training: center crop, normalize."""
    return normalize(center_crop(frame, cfg.crop_size), cfg.normalize_mean, cfg.normalize_std)
