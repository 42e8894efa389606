"""Synthetic movies with analytically known motion.

Frames are sampled from continuous models at integer pixel coordinates
(pixel centres). Keep blobs at sigma >= 2 px and speeds at or below about
1 px/frame: the gradient method linearizes intensity, and sharper or faster
features leave that regime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from caflow.errors import NoMotionError, ParameterError
from caflow.movie_io import Calibration, MovieStack

KINDS = ("translating_blob", "space_time_ramp", "radial_wave", "constant")


@dataclass(frozen=True)
class SynthSpec:
    """Parameters for :func:`generate`.

    Only the fields relevant to ``kind`` are read. ``annulus_width`` is the
    standard deviation of the wave's Gaussian radial profile.
    """

    kind: str
    width: int = 64
    height: int = 64
    frame_count: int = 8
    calibration: Calibration = field(default_factory=lambda: Calibration(8.0, 1.3))
    # translating_blob
    center: tuple[float, float] = (32.0, 32.0)
    sigma_px: float = 3.0
    amplitude: float = 100.0
    velocity: tuple[float, float] = (0.5, 0.0)
    background: float = 10.0
    # space_time_ramp
    a: float = 1.0
    b: float = 0.0
    c: float = -1.0
    # radial_wave
    origin: tuple[float, float] = (32.0, 32.0)
    wave_speed: float = 1.0
    annulus_width: float = 3.0
    # constant
    level: float = 50.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown synthetic kind {self.kind!r}; expected one of {KINDS}")
        if self.width < 1 or self.height < 1:
            raise ParameterError("dimensions must be positive")
        if self.frame_count < 2:
            raise ParameterError("frame_count must be >= 2")
        if not self.noise_sigma >= 0:
            raise ParameterError("noise_sigma must be >= 0")
        if self.kind == "translating_blob" and not self.sigma_px > 0:
            raise ParameterError("sigma_px must be positive")
        if self.kind == "radial_wave" and not (self.annulus_width > 0 and self.wave_speed >= 0):
            raise ParameterError("annulus_width must be positive and wave_speed >= 0")


def _grid(spec: SynthSpec):
    y, x = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    return x, y


def model_frame(spec: SynthSpec, t: float) -> np.ndarray:
    """Noiseless intensity at (possibly fractional) time ``t`` in frames."""
    x, y = _grid(spec)
    if spec.kind == "constant":
        return np.full(x.shape, float(spec.level))
    if spec.kind == "space_time_ramp":
        return spec.a * x + spec.b * y + spec.c * t
    if spec.kind == "translating_blob":
        cx = spec.center[0] + spec.velocity[0] * t
        cy = spec.center[1] + spec.velocity[1] * t
        r2 = (x - cx) ** 2 + (y - cy) ** 2
        return spec.background + spec.amplitude * np.exp(-r2 / (2.0 * spec.sigma_px ** 2))
    r = np.hypot(x - spec.origin[0], y - spec.origin[1])
    d = r - spec.wave_speed * t
    return spec.background + spec.amplitude * np.exp(-d * d / (2.0 * spec.annulus_width ** 2))


def generate(spec: SynthSpec) -> MovieStack:
    """Sample every frame; add seeded zero-mean Gaussian noise if requested."""
    frames = np.stack([model_frame(spec, float(t)) for t in range(spec.frame_count)])
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        frames = frames + rng.normal(0.0, spec.noise_sigma, size=frames.shape)
    return MovieStack(frames, spec.calibration)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    u: np.ndarray
    v: np.ndarray
    support: np.ndarray
    ambiguous: bool = False


def ground_truth_flow(spec: SynthSpec, t_index: int) -> GroundTruth:
    """True px/frame velocity for the pair (t, t+1) and where it is defined."""
    if spec.kind == "constant":
        raise NoMotionError("the constant model has no motion")
    if not 0 <= t_index <= spec.frame_count - 2:
        raise ParameterError(f"t_index {t_index} outside [0, {spec.frame_count - 2}]")
    shape = (spec.height, spec.width)
    if spec.kind == "translating_blob":
        signal = model_frame(spec, float(t_index)) - spec.background
        support = signal > 0.01 * abs(spec.amplitude)
        return GroundTruth(np.full(shape, float(spec.velocity[0])),
                           np.full(shape, float(spec.velocity[1])), support)
    if spec.kind == "space_time_ramp":
        norm2 = spec.a ** 2 + spec.b ** 2
        if norm2 == 0:
            raise NoMotionError("ramp without spatial slope has no observable motion")
        return GroundTruth(np.full(shape, -spec.c * spec.a / norm2),
                           np.full(shape, -spec.c * spec.b / norm2),
                           np.ones(shape, dtype=bool), ambiguous=True)
    x, y = _grid(spec)
    dx, dy = x - spec.origin[0], y - spec.origin[1]
    r = np.hypot(dx, dy)
    with np.errstate(invalid="ignore", divide="ignore"):
        ux = np.where(r > 0, dx / r, 0.0) * spec.wave_speed
        vy = np.where(r > 0, dy / r, 0.0) * spec.wave_speed
    support = (np.abs(r - spec.wave_speed * t_index) <= 2.0 * spec.annulus_width) & (r > 0)
    return GroundTruth(ux, vy, support)


def summary(spec: SynthSpec) -> str:
    """One-line human description of the true motion."""
    cal = spec.calibration
    if spec.kind == "constant":
        return "constant: no motion"
    if spec.kind == "translating_blob":
        vx, vy = spec.velocity
        speed = math.hypot(vx, vy)
        return (f"translating_blob: v=({vx:g}, {vy:g}) px/frame, |v|={speed:g} px/frame "
                f"= {speed * cal.velocity_scale:g} um/s")
    if spec.kind == "space_time_ramp":
        gt = ground_truth_flow(spec, 0)
        return (f"space_time_ramp: a*u + b*v = {-spec.c:g} (aperture-ambiguous), minimum-norm "
                f"v=({gt.u[0, 0]:g}, {gt.v[0, 0]:g}) px/frame")
    return (f"radial_wave: outward {spec.wave_speed:g} px/frame = "
            f"{spec.wave_speed * cal.velocity_scale:g} um/s from "
            f"({spec.origin[0]:g}, {spec.origin[1]:g})")
