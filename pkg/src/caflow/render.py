"""Colour maps and simple rasterization for PPM outputs."""

from __future__ import annotations

import colorsys

import numpy as np

# Rainbow: hue runs from 240 deg (blue, earliest) down to 0 deg (red, latest).
RAINBOW_HUE_START = 240.0
RAINBOW_HUE_END = 0.0


def rainbow(s) -> np.ndarray:
    """Map s in [0, 1] to uint8 RGB on a blue-to-red HSV ramp."""
    s = np.clip(np.asarray(s, dtype=np.float64), 0.0, 1.0)
    hue = (RAINBOW_HUE_START + (RAINBOW_HUE_END - RAINBOW_HUE_START) * s) / 360.0
    flat = np.array([colorsys.hsv_to_rgb(h, 1.0, 1.0) for h in hue.ravel()]).reshape(s.shape + (3,))
    return np.rint(flat * 255.0).astype(np.uint8)


def diverging(s) -> np.ndarray:
    """Map s in [-1, 1] to blue (-1), white (0), red (+1)."""
    s = np.clip(np.asarray(s, dtype=np.float64), -1.0, 1.0)
    rgb = np.ones(s.shape + (3,))
    pos = s > 0
    neg = s < 0
    rgb[..., 1] -= np.abs(s)
    rgb[..., 2] = np.where(pos, 1.0 - s, rgb[..., 2])
    rgb[..., 0] = np.where(neg, 1.0 + s, rgb[..., 0])
    return np.rint(rgb * 255.0).astype(np.uint8)


def grayscale(plane: np.ndarray, lo: float, hi: float) -> np.ndarray:
    span = hi - lo if hi > lo else 1.0
    g = np.rint(np.clip((np.asarray(plane, dtype=np.float64) - lo) / span, 0.0, 1.0) * 255.0)
    return np.repeat(g.astype(np.uint8)[..., None], 3, axis=2)


def draw_segment(image: np.ndarray, x0: float, y0: float, x1: float, y1: float, color) -> None:
    """Rasterize a one-pixel-wide segment in place (DDA, endpoints rounded)."""
    height, width = image.shape[:2]
    steps = int(max(abs(x1 - x0), abs(y1 - y0), 1.0) * 2) + 1
    xs = np.rint(np.linspace(x0, x1, steps)).astype(int)
    ys = np.rint(np.linspace(y0, y1, steps)).astype(int)
    keep = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
    image[ys[keep], xs[keep]] = color


def mask_boundary(mask: np.ndarray) -> np.ndarray:
    """Pixels inside ``mask`` with at least one 4-neighbour outside it."""
    padded = np.pad(mask, 1, mode="constant", constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:])
    return mask & ~interior
