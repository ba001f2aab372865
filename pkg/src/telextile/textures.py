"""Synthetic tactile frames: procedural woven surfaces pressed against a
simulated elastomer sensor and imaged under three colored lights.

A texture is described by a small parametric recipe (``TextureSpec``).  A
capture session renders a stack of frames from it under one of two
acquisition regimes: a rigid fixture ("jig") with tight pressure/angle
tolerances, or free-hand capture with wide ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

# Free-hand jitter defaults; jig configs must stay at or below these.
HANDHELD_PRESSURE_JITTER = 0.15
HANDHELD_TILT_JITTER = 12.0     # degrees
HANDHELD_POSITION_JITTER = 3.0  # pixels

JIG_PRESSURE_JITTER = 0.02
JIG_TILT_JITTER = 1.5
JIG_POSITION_JITTER = 0.5

# Colored directional lights (unit vectors, x/y/z with z out of the surface),
# one per channel, 120 degrees apart in azimuth.  Elevations differ per LED:
# the green light sits high (soft, low-contrast shading) while red and blue
# graze the surface, which is what gives the channels their unequal spread.
_LIGHT_ELEVATIONS = (math.radians(35.0), math.radians(50.0), math.radians(28.0))
_LIGHT_AZIMUTHS = (math.radians(90.0), math.radians(210.0), math.radians(330.0))
_LIGHTS = np.array(
    [
        [
            math.cos(el) * math.cos(az),
            math.cos(el) * math.sin(az),
            math.sin(el),
        ]
        for el, az in zip(_LIGHT_ELEVATIONS, _LIGHT_AZIMUTHS)
    ],
    dtype=np.float64,
)

# Per-channel ambient floor and diffuse gain, calibrated so a jig-regime
# corpus reproduces the channel statistics the augmentation normalizer
# assumes (mean ~0.38/0.41/0.38, spread largest in blue, smallest in green).
_AMBIENT = np.array([0.123, 0.092, 0.077], dtype=np.float64)
_DIFFUSE = np.array([0.487, 0.460, 0.701], dtype=np.float64)
_RELIEF_GAIN = 3.0


@dataclass(frozen=True)
class TextureSpec:
    """Parametric recipe for one woven textile surface."""

    weave_period_u: float          # thread spacing along x, pixels (>= 2)
    weave_period_v: float          # thread spacing along y, pixels (>= 2)
    yarn_thickness: float          # yarn width as a fraction of the period, (0, 1)
    fuzz_amplitude: float          # surface hairiness, [0, 1]
    stiffness_relief: float        # ridge sharpness, [0, 1]
    rng_seed: int = 0

    def __post_init__(self):
        if not (self.weave_period_u >= 2 and self.weave_period_v >= 2):
            raise ValueError(
                f"weave periods must be >= 2 px, got "
                f"({self.weave_period_u}, {self.weave_period_v})"
            )
        if not 0.0 < self.yarn_thickness < 1.0:
            raise ValueError(f"yarn_thickness must be in (0, 1), got {self.yarn_thickness}")
        if not 0.0 <= self.fuzz_amplitude <= 1.0:
            raise ValueError(f"fuzz_amplitude must be in [0, 1], got {self.fuzz_amplitude}")
        if not 0.0 <= self.stiffness_relief <= 1.0:
            raise ValueError(
                f"stiffness_relief must be in [0, 1], got {self.stiffness_relief}"
            )

    def to_dict(self) -> dict:
        return {
            "weave_period_u": self.weave_period_u,
            "weave_period_v": self.weave_period_v,
            "yarn_thickness": self.yarn_thickness,
            "fuzz_amplitude": self.fuzz_amplitude,
            "stiffness_relief": self.stiffness_relief,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TextureSpec":
        return cls(**d)


@dataclass(frozen=True)
class AcquisitionConfig:
    """One capture session's mechanics: frame cadence and contact jitter."""

    jig: bool
    frames_per_sample: int = 150
    frame_rate: float = 60.0       # Hz
    duration: float = 2.5          # seconds
    pressure_jitter: float = JIG_PRESSURE_JITTER   # relative indentation noise
    tilt_jitter: float = JIG_TILT_JITTER           # degrees
    position_jitter: float = JIG_POSITION_JITTER   # pixels
    frame_height: int = 64
    frame_width: int = 64

    def __post_init__(self):
        if self.frames_per_sample != round(self.frame_rate * self.duration):
            raise ValueError(
                f"frames_per_sample={self.frames_per_sample} inconsistent with "
                f"frame_rate*duration={self.frame_rate * self.duration}"
            )
        for name in ("pressure_jitter", "tilt_jitter", "position_jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.frame_height < 8 or self.frame_width < 8:
            raise ValueError("frame dimensions must be >= 8 px")
        if self.jig:
            caps = {
                "pressure_jitter": HANDHELD_PRESSURE_JITTER,
                "tilt_jitter": HANDHELD_TILT_JITTER,
                "position_jitter": HANDHELD_POSITION_JITTER,
            }
            for name, cap in caps.items():
                if getattr(self, name) > cap:
                    raise ValueError(
                        f"jig config has {name}={getattr(self, name)} above the "
                        f"free-hand scale {cap}"
                    )

    @classmethod
    def jig_default(cls, **overrides) -> "AcquisitionConfig":
        return cls(jig=True, **overrides)

    @classmethod
    def handheld_default(cls, **overrides) -> "AcquisitionConfig":
        overrides.setdefault("pressure_jitter", HANDHELD_PRESSURE_JITTER)
        overrides.setdefault("tilt_jitter", HANDHELD_TILT_JITTER)
        overrides.setdefault("position_jitter", HANDHELD_POSITION_JITTER)
        return cls(jig=False, **overrides)

    def to_dict(self) -> dict:
        return {
            "jig": self.jig,
            "frames_per_sample": self.frames_per_sample,
            "frame_rate": self.frame_rate,
            "duration": self.duration,
            "pressure_jitter": self.pressure_jitter,
            "tilt_jitter": self.tilt_jitter,
            "position_jitter": self.position_jitter,
            "frame_height": self.frame_height,
            "frame_width": self.frame_width,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AcquisitionConfig":
        return cls(**d)


@dataclass
class TactileFrame:
    """One sensor capture: an H x W x 3 intensity grid in [0, 1]."""

    sample_id: str
    frame_index: int
    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"pixels must be H x W x 3, got shape {px.shape}")
        if px.shape[0] < 8 or px.shape[1] < 8:
            raise ValueError(f"frame must be at least 8 x 8, got {px.shape[:2]}")
        if not np.all(np.isfinite(px)):
            raise ValueError("pixels must be finite")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("pixel intensities must lie in [0, 1]")
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")
        self.pixels = px.astype(np.float32, copy=False)


def unit_from_u8(raw: np.ndarray) -> np.ndarray:
    """8-bit intensities -> float32 in [0, 1].  This is the one conversion
    used by both the renderer and the dataset loader, so that disk round
    trips are bit-identical."""
    return raw.astype(np.float32) / 255.0


def quantize_frame(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and snap to the sensor's 8-bit intensity grid."""
    raw = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    return unit_from_u8(raw)


def _yarn_profile(phase: np.ndarray, thickness: float, sharpness: float) -> np.ndarray:
    """Height of a yarn ridge across one weave cycle.

    ``phase`` is the fractional position in the cycle; the ridge is centered
    at 0.5 and spans ``thickness`` of the cycle.  Stiffer yarns get a more
    peaked cross-section.
    """
    t = phase - np.floor(phase)
    bump = np.cos(np.pi * (t - 0.5) / thickness)
    np.clip(bump, 0.0, None, out=bump)
    return bump ** (1.0 + 2.5 * sharpness)


def generate_sample_surface(spec: TextureSpec, shape: tuple[int, int] = (64, 64)) -> np.ndarray:
    """Render the height map of a woven surface, values in [0, 1].

    The weave component is exactly periodic with the spec's periods; fuzz
    adds band-limited noise seeded by ``spec.rng_seed``.
    """
    h, w = shape
    if h < 2 or w < 2:
        raise ValueError(f"surface shape must be at least 2 x 2, got {shape}")
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)

    warp = _yarn_profile(xs / spec.weave_period_u, spec.yarn_thickness, spec.stiffness_relief)
    weft = _yarn_profile(ys / spec.weave_period_v, spec.yarn_thickness, spec.stiffness_relief)
    height = 0.42 * warp + 0.42 * weft + 0.16 * warp * weft

    if spec.fuzz_amplitude > 0.0:
        rng = np.random.default_rng(spec.rng_seed)
        noise = rng.standard_normal((h, w))
        noise = ndimage.gaussian_filter(noise, sigma=1.2, mode="wrap")
        sd = noise.std()
        if sd > 0:
            noise /= sd
        height = height + 0.22 * spec.fuzz_amplitude * noise

    return np.clip(height, 0.0, 1.0)


def render_pressed_frame(
    surface: np.ndarray,
    pressure: float,
    angle_deg: float,
    offset: tuple[float, float],
    shape: tuple[int, int],
) -> np.ndarray:
    """Shade a pressed, rotated, shifted window of ``surface``.

    Returns an H x W x 3 float32 image on the 8-bit grid.  Lambertian
    shading under three fixed colored lights mimics the tri-color relief
    look of an illuminated elastomer sensor.
    """
    h, w = shape
    sh, sw = surface.shape
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)

    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    rows -= (h - 1) / 2.0
    cols -= (w - 1) / 2.0
    src_r = cos_t * rows - sin_t * cols + (sh - 1) / 2.0 + offset[0]
    src_c = sin_t * rows + cos_t * cols + (sw - 1) / 2.0 + offset[1]

    window = ndimage.map_coordinates(surface, [src_r, src_c], order=1, mode="nearest")
    pressed = window * pressure

    gy, gx = np.gradient(pressed)
    nz = np.ones_like(pressed)
    normals = np.stack([-gx * _RELIEF_GAIN, -gy * _RELIEF_GAIN, nz], axis=-1)
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)

    shade = normals @ _LIGHTS.T            # H x W x 3, one channel per light
    np.clip(shade, 0.0, None, out=shade)
    img = _AMBIENT + _DIFFUSE * shade
    # Harder presses flood more light back into the sensor.
    img *= 0.85 + 0.15 * pressure
    return quantize_frame(img)


def _surface_extent(cfg: AcquisitionConfig) -> tuple[int, int]:
    # Large enough that any rotated, jittered window stays inside.
    diag = math.hypot(cfg.frame_height, cfg.frame_width)
    margin = int(math.ceil(4.0 * cfg.position_jitter)) + 4
    side = int(math.ceil(diag)) + 2 * margin
    return side, side


def simulate_acquisition(
    spec: TextureSpec,
    cfg: AcquisitionConfig,
    seed: int,
    sample_id: str = "sample-0",
) -> list[TactileFrame]:
    """Simulate one capture session: ``cfg.frames_per_sample`` frames of the
    surface under per-frame pressure/tilt/offset jitter.

    Free-hand sessions additionally draw one quarter-turn sensor rotation
    (0/90/180/270 degrees) for the whole session, reflecting how hand-held
    sensors get picked up in arbitrary orientations.
    """
    rng = np.random.default_rng(seed)
    surface = generate_sample_surface(spec, _surface_extent(cfg))
    shape = (cfg.frame_height, cfg.frame_width)

    session_quarter = 0 if cfg.jig else int(rng.integers(0, 4))

    frames = []
    for i in range(cfg.frames_per_sample):
        pressure = float(np.clip(1.0 + cfg.pressure_jitter * rng.standard_normal(), 0.2, 2.0))
        tilt = cfg.tilt_jitter * float(rng.standard_normal())
        offset = (
            cfg.position_jitter * float(rng.standard_normal()),
            cfg.position_jitter * float(rng.standard_normal()),
        )
        pixels = render_pressed_frame(
            surface, pressure, 90.0 * session_quarter + tilt, offset, shape
        )
        frames.append(TactileFrame(sample_id=sample_id, frame_index=i, pixels=pixels))
    return frames


def dominant_orientation(pixels: np.ndarray) -> float:
    """Dominant texture orientation of a frame in degrees, in [-90, 90).

    Structure-tensor estimate over the mean channel; used to measure how
    much the sensor was rotated between frames.
    """
    gray = np.asarray(pixels, dtype=np.float64).mean(axis=2)
    gy, gx = np.gradient(gray)
    jxx = float((gx * gx).sum())
    jyy = float((gy * gy).sum())
    jxy = float((gx * gy).sum())
    angle = 0.5 * math.atan2(2.0 * jxy, jxx - jyy)
    deg = math.degrees(angle)
    if deg >= 90.0:
        deg -= 180.0
    elif deg < -90.0:
        deg += 180.0
    return deg
