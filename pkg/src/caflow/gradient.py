"""Spatial and temporal intensity derivatives from 2x2 kernels.

Kernels are applied correlation-style (no flip), so the x kernel
``1/4 [[-1, 1], [-1, 1]]`` gives a positive derivative on an intensity ramp
increasing to the right. Output pixel ``(x, y)`` summarizes the 2x2
neighbourhood whose top-left corner is input pixel ``(x, y)``; outputs are
one pixel smaller than the input in each direction.

Each 1/4-normalized spatial kernel holds two differences; applied to one
frame it returns half the slope (``a/2`` on ``a*x``). Spatial derivatives
for a frame pair therefore sum the kernel response over frames t and t+1,
the 8-sample stencil whose four differences the 1/4 normalizes. This also
centres the spatial terms at t + 1/2, where the temporal difference lives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from caflow.errors import FormatError, InsufficientDataError, ParameterError
from caflow.movie_io import MovieStack

KERNEL_X = 0.25 * np.array([[-1.0, 1.0], [-1.0, 1.0]])
KERNEL_Y = 0.25 * np.array([[-1.0, -1.0], [1.0, 1.0]])
KERNEL_T = 0.25 * np.array([[1.0, 1.0], [1.0, 1.0]])


@dataclass(frozen=True, eq=False)
class GradientTriplet:
    """dI/dx, dI/dy (intensity/pixel) and dI/dt (intensity/frame) on a (H-1, W-1) grid."""

    ix: np.ndarray
    iy: np.ndarray
    it: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.ix.shape


def conv2x2(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """out[y, x] = sum_ij kernel[i, j] * plane[y + i, x + j]."""
    plane = np.asarray(plane, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.shape != (2, 2):
        raise ParameterError("kernel must be 2x2")
    if plane.ndim != 2 or plane.shape[0] < 2 or plane.shape[1] < 2:
        raise InsufficientDataError("plane must be at least 2x2")
    h, w = plane.shape
    # Column-paired summation: kernels cancel exactly on inputs that vary
    # along one axis only.
    left = kernel[0, 0] * plane[0:h - 1, 0:w - 1] + kernel[1, 0] * plane[1:h, 0:w - 1]
    right = kernel[0, 1] * plane[0:h - 1, 1:w] + kernel[1, 1] * plane[1:h, 1:w]
    return left + right


def temporal_gradient(frame_t: np.ndarray, frame_t1: np.ndarray) -> np.ndarray:
    """Frame difference smoothed with the 1/4 all-ones kernel; dt is one frame."""
    frame_t = np.asarray(frame_t, dtype=np.float64)
    frame_t1 = np.asarray(frame_t1, dtype=np.float64)
    if frame_t.shape != frame_t1.shape:
        raise FormatError(f"frame shapes differ: {frame_t.shape} vs {frame_t1.shape}")
    return conv2x2(frame_t1 - frame_t, KERNEL_T)


def gradients_for_pair(movie: MovieStack, t_index: int) -> GradientTriplet:
    """Derivatives for the pair (t, t+1) of ``movie``."""
    if not 0 <= t_index <= movie.frame_count - 2:
        raise ParameterError(f"t_index {t_index} outside [0, {movie.frame_count - 2}]")
    return gradients_for_frames(movie.frames[t_index], movie.frames[t_index + 1])


def gradients_for_frames(frame_t: np.ndarray, frame_t1: np.ndarray) -> GradientTriplet:
    it = temporal_gradient(frame_t, frame_t1)
    return GradientTriplet(
        ix=conv2x2(frame_t, KERNEL_X) + conv2x2(frame_t1, KERNEL_X),
        iy=conv2x2(frame_t, KERNEL_Y) + conv2x2(frame_t1, KERNEL_Y),
        it=it,
    )
