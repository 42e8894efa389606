"""Windowed weighted least-squares (Lucas-Kanade) flow with eigenvalue masking.

For each pixel the 2x2 structure tensor ``M = A^T W^2 A`` and the right-hand
side ``A^T W^2 b`` are pooled over a Gaussian-weighted square window, and the
flow vector is ``M^{-1} A^T W^2 b``. The smaller eigenvalue of ``M`` measures
how well conditioned that solve is; thresholding it is the reliability test.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from caflow.errors import OutOfBoundsError, ParameterError
from caflow.gradient import GradientTriplet, gradients_for_frames
from caflow.movie_io import Calibration, FlowField, MovieStack

DET_EPS = 1e-12
_TINY = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class FlowParams:
    window_width: int
    eigenvalue_threshold: float = 0.0
    pre_smooth_sigma: float = 0.0

    def __post_init__(self):
        w = self.window_width
        if isinstance(w, bool) or int(w) != w or w < 3 or w % 2 == 0:
            raise ParameterError(f"window width must be an odd integer >= 3, got {w!r}")
        object.__setattr__(self, "window_width", int(w))
        for name in ("eigenvalue_threshold", "pre_smooth_sigma"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise ParameterError(f"{name} must be finite and >= 0, got {value!r}")
            object.__setattr__(self, name, value)

    def check_fits(self, width: int, height: int) -> None:
        if self.window_width > min(width - 1, height - 1):
            raise ParameterError(
                f"window {self.window_width} does not fit a {width}x{height} movie "
                f"(max {min(width - 1, height - 1)})")


@dataclass(frozen=True, eq=False)
class WindowWeights:
    width: int
    weights: np.ndarray

    @property
    def half(self) -> int:
        return self.width // 2


@dataclass(frozen=True)
class StructureTensorSystem:
    """Entries of ``A^T W^2 A`` (symmetric) and ``A^T W^2 b``.

    Fields may be scalars or equally shaped arrays.
    """

    m11: float
    m12: float
    m22: float
    b1: float
    b2: float


def gaussian_window(width: int) -> WindowWeights:
    """Unit-sum 2-D Gaussian with sigma = width / 6.

    For width 5 this rounds (x1000) to the matrix
    ``[[1,6,13,6,1],[6,54,112,54,6],[13,112,230,112,13],...]``.
    """
    if isinstance(width, bool) or int(width) != width or width < 3 or width % 2 == 0:
        raise ParameterError(f"window width must be an odd integer >= 3, got {width!r}")
    width = int(width)
    sigma = width / 6.0
    offsets = np.arange(width) - width // 2
    g = np.exp(-(offsets[:, None] ** 2 + offsets[None, :] ** 2) / (2.0 * sigma * sigma))
    weights = g / g.sum()
    weights.setflags(write=False)
    return WindowWeights(width, weights)


def assemble_system(triplet: GradientTriplet, window: WindowWeights,
                    cx: int, cy: int) -> StructureTensorSystem:
    """Pool the window centred at gradient-grid pixel (cx, cy)."""
    h = window.half
    rows, cols = triplet.shape
    if cy - h < 0 or cx - h < 0 or cy + h >= rows or cx + h >= cols:
        raise OutOfBoundsError(f"window at ({cx}, {cy}) overhangs the {cols}x{rows} gradient grid")
    sl = (slice(cy - h, cy + h + 1), slice(cx - h, cx + h + 1))
    w2 = window.weights ** 2
    ix, iy, it = triplet.ix[sl], triplet.iy[sl], triplet.it[sl]
    return StructureTensorSystem(
        m11=float(np.sum(w2 * (ix * ix))),
        m12=float(np.sum(w2 * (ix * iy))),
        m22=float(np.sum(w2 * (iy * iy))),
        b1=-float(np.sum(w2 * (ix * it))),
        b2=-float(np.sum(w2 * (iy * it))),
    )


def assemble_planes(triplet: GradientTriplet, window: WindowWeights) -> StructureTensorSystem:
    """Systems for every centre whose window fits, as (rows-2h, cols-2h) arrays.

    Accumulation runs over window offsets in a fixed order with elementwise
    operations only, so each output pixel is independent of array extent.
    """
    h = window.half
    rows, cols = triplet.shape
    out_rows, out_cols = rows - 2 * h, cols - 2 * h
    if out_rows < 1 or out_cols < 1:
        raise ParameterError(f"window {window.width} does not fit the {cols}x{rows} gradient grid")
    products = (triplet.ix * triplet.ix, triplet.ix * triplet.iy, triplet.iy * triplet.iy,
                triplet.ix * triplet.it, triplet.iy * triplet.it)
    sums = [np.zeros((out_rows, out_cols)) for _ in products]
    w2 = window.weights ** 2
    for i in range(window.width):
        for j in range(window.width):
            weight = w2[i, j]
            for acc, prod in zip(sums, products):
                acc += weight * prod[i:i + out_rows, j:j + out_cols]
    m11, m12, m22, sxt, syt = sums
    return StructureTensorSystem(m11, m12, m22, -sxt, -syt)


def eigen2x2(m11, m12, m22):
    """Eigenvalues (lambda_min, lambda_max) of [[m11, m12], [m12, m22]].

    The discriminant is written as (m11-m22)^2 + 4 m12^2 (= tr^2 - 4 det,
    non-negative by construction) and lambda_min is taken as det / lambda_max
    to avoid cancellation. Accepts scalars or arrays.
    """
    m11 = np.asarray(m11, dtype=np.float64)
    m12 = np.asarray(m12, dtype=np.float64)
    m22 = np.asarray(m22, dtype=np.float64)
    tr = m11 + m22
    disc = np.sqrt(np.maximum((m11 - m22) ** 2 + 4.0 * m12 * m12, 0.0))
    lam_max = 0.5 * (tr + disc)
    det = m11 * m22 - m12 * m12
    with np.errstate(divide="ignore", invalid="ignore"):
        lam_min = np.where(lam_max > 0, det / np.where(lam_max > 0, lam_max, 1.0), 0.0)
    lam_min = np.clip(lam_min, 0.0, None)
    lam_min = np.minimum(lam_min, lam_max)
    if lam_min.ndim == 0:
        return float(lam_min), float(lam_max)
    return lam_min, lam_max


def is_solvable(m11, m12, m22):
    tr = np.asarray(m11) + np.asarray(m22)
    det = np.asarray(m11) * np.asarray(m22) - np.asarray(m12) ** 2
    return det > DET_EPS * np.maximum(tr * tr, _TINY)


def solve_flow(system: StructureTensorSystem, min_norm: bool = False):
    """Closed-form 2x2 solve; returns (u_x, v_y) or None when degenerate.

    With ``min_norm`` a degenerate but non-zero system is solved with the
    rank-one pseudo-inverse ``M / tr^2`` instead, giving the minimum-norm
    vector on the constraint line.
    """
    m11, m12, m22, b1, b2 = (system.m11, system.m12, system.m22, system.b1, system.b2)
    if is_solvable(m11, m12, m22):
        det = m11 * m22 - m12 * m12
        return (m22 * b1 - m12 * b2) / det, (m11 * b2 - m12 * b1) / det
    tr = m11 + m22
    if min_norm and tr > 0:
        return (m11 * b1 + m12 * b2) / (tr * tr), (m12 * b1 + m22 * b2) / (tr * tr)
    return None


def solve_planes(system: StructureTensorSystem):
    """Vectorized :func:`solve_flow`; NaN where the system is degenerate."""
    m11, m12, m22, b1, b2 = (system.m11, system.m12, system.m22, system.b1, system.b2)
    ok = is_solvable(m11, m12, m22)
    det = np.where(ok, m11 * m22 - m12 * m12, 1.0)
    u = np.where(ok, (m22 * b1 - m12 * b2) / det, np.nan)
    v = np.where(ok, (m11 * b2 - m12 * b1) / det, np.nan)
    return u, v


def weighted_residual(triplet: GradientTriplet, window: WindowWeights, cx: int, cy: int,
                      u: float, v: float) -> float:
    """sum W^2 (ix u + iy v + it)^2 over the window centred at (cx, cy)."""
    h = window.half
    sl = (slice(cy - h, cy + h + 1), slice(cx - h, cx + h + 1))
    r = triplet.ix[sl] * u + triplet.iy[sl] * v + triplet.it[sl]
    return float(np.sum(window.weights ** 2 * r * r))


def gaussian_smooth(frame: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur truncated at 3 sigma, mirrored borders."""
    if sigma <= 0:
        return np.asarray(frame, dtype=np.float64)
    radius = max(1, int(math.ceil(3.0 * sigma)))
    taps = np.exp(-np.arange(-radius, radius + 1) ** 2 / (2.0 * sigma * sigma))
    taps /= taps.sum()
    out = np.asarray(frame, dtype=np.float64)
    for axis in (0, 1):
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius, radius)
        padded = np.pad(out, pad, mode="symmetric")
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for k, tap in enumerate(taps):
            acc += tap * (padded[k:k + n, :] if axis == 0 else padded[:, k:k + n])
        out = acc
    return out


def _flow_for_pair(frame_t, frame_t1, window, calibration, t_index) -> FlowField:
    height, width = frame_t.shape
    triplet = gradients_for_frames(frame_t, frame_t1)
    system = assemble_planes(triplet, window)
    lam_min, lam_max = eigen2x2(system.m11, system.m12, system.m22)
    u, v = solve_planes(system)

    h = window.half
    rows, cols = u.shape
    full = {name: np.full((height, width), fill) for name, fill in
            (("u", np.nan), ("v", np.nan), ("lambda_min", 0.0), ("lambda_max", 0.0))}
    sl = (slice(h, h + rows), slice(h, h + cols))
    full["u"][sl] = u
    full["v"][sl] = v
    full["lambda_min"][sl] = lam_min
    full["lambda_max"][sl] = lam_max
    return FlowField(valid_origin=(h, h), valid_extent=(cols, rows),
                     calibration=calibration, t_index=t_index, **full)


def compute_flow_field(movie: MovieStack, params: FlowParams, jobs: int = 1) -> list[FlowField]:
    """One FlowField per adjacent frame pair.

    Vectors sit on the top-left pixel of each 2x2 derivative neighbourhood.
    The valid region starts at (h, h) with h the window half-width and spans
    (W - 1 - 2h) x (H - 1 - 2h) pixels. ``jobs`` only distributes frame pairs
    over threads; results are bit-identical for any value.
    """
    params.check_fits(movie.width, movie.height)
    window = gaussian_window(params.window_width)
    frames = movie.frames
    if params.pre_smooth_sigma > 0:
        frames = np.stack([gaussian_smooth(f, params.pre_smooth_sigma) for f in frames])

    def run(t):
        return _flow_for_pair(frames[t], frames[t + 1], window, movie.calibration, t)

    pairs = range(movie.frame_count - 1)
    if jobs is None or jobs <= 1:
        return [run(t) for t in pairs]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run, pairs))


def apply_mask(field: FlowField, threshold: float) -> np.ndarray:
    """Reliable iff lambda_min > threshold (which implies lambda_max > threshold)."""
    if threshold < 0:
        raise ParameterError("threshold must be >= 0")
    return field.reliable(threshold)


def to_physical(field: FlowField, calibration: Calibration | None = None):
    """(vx, vy) planes in microns/second."""
    calibration = calibration or field.calibration
    scale = calibration.velocity_scale
    return np.asarray(field.u, dtype=np.float64) * scale, np.asarray(field.v, dtype=np.float64) * scale


def threshold_sweep(fields: Sequence[FlowField], taus: Sequence[float]) -> np.ndarray:
    """Reliable-vector counts, shape (len(taus), len(fields))."""
    return np.array([[int(np.count_nonzero(apply_mask(f, tau))) for f in fields] for tau in taus],
                    dtype=np.int64)


def choose_threshold(fields: Sequence[FlowField], taus: Sequence[float],
                     keep: np.ndarray | Sequence[np.ndarray], coverage: float = 0.95) -> float:
    """Largest candidate threshold whose mask still covers ``keep``.

    ``keep`` is a boolean plane (or one per field) marking pixels that must
    remain reliable; the returned threshold retains at least ``coverage`` of
    them summed over all fields. Falls back to the smallest candidate.
    """
    taus = sorted(float(t) for t in taus)
    if not taus:
        raise ParameterError("no candidate thresholds")
    keeps = [keep] * len(fields) if isinstance(keep, np.ndarray) else list(keep)
    wanted = sum(int(np.count_nonzero(k)) for k in keeps)
    best = taus[0]
    for tau in taus:
        kept = sum(int(np.count_nonzero(apply_mask(f, tau) & k)) for f, k in zip(fields, keeps))
        if wanted and kept >= coverage * wanted:
            best = tau
    return best
