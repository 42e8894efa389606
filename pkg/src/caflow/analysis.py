"""Analysis products built on flow-field sequences.

Speeds and displacements are reported in microns and seconds via the
field calibration; pixel coordinates follow the image convention (x to the
right, y downward), so directions are measured clockwise on screen.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from caflow.errors import FormatError, ParameterError
from caflow.flow_core import apply_mask, to_physical
from caflow.movie_io import Calibration, FlowField, MovieStack, write_ppm, write_sidecar
from caflow.render import diverging, draw_segment, rainbow

TERMINATIONS = ("left-valid-region", "entered-unreliable", "end-of-movie")
DEFAULT_BIN_COUNT = 20


@dataclass(frozen=True)
class RegionOfInterest:
    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ParameterError("region of interest must be non-empty")
        if self.x0 < 0 or self.y0 < 0:
            raise ParameterError("region of interest must start inside the image")

    @classmethod
    def parse(cls, text: str) -> "RegionOfInterest":
        try:
            x0, y0, w, h = (int(p) for p in text.split(","))
        except ValueError:
            raise ParameterError(f"expected ROI as x,y,w,h, got {text!r}") from None
        return cls(x0, y0, w, h)

    def check_inside(self, field: FlowField) -> None:
        if self.x0 + self.w > field.width or self.y0 + self.h > field.height:
            raise ParameterError(
                f"ROI {self.x0},{self.y0},{self.w},{self.h} exceeds {field.width}x{field.height}")

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y0 + self.h), slice(self.x0, self.x0 + self.w)


def _calibration(fields: Sequence[FlowField], calibration: Calibration | None) -> Calibration:
    if calibration is not None:
        return calibration
    if not fields:
        raise ParameterError("no flow fields")
    return fields[0].calibration


def roi_vectors(fields: Sequence[FlowField], roi: RegionOfInterest, threshold: float,
                calibration: Calibration | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Reliable (vx, vy) in um/s inside ``roi`` over all pairs, in (t, y, x) order."""
    cal = _calibration(fields, calibration)
    xs, ys = [], []
    for field in fields:
        roi.check_inside(field)
        mask = apply_mask(field, threshold)[roi.slices]
        vx, vy = to_physical(field, cal)
        xs.append(vx[roi.slices][mask])
        ys.append(vy[roi.slices][mask])
    if not xs:
        return np.empty(0), np.empty(0)
    return np.concatenate(xs), np.concatenate(ys)


@dataclass(frozen=True, eq=False)
class SpeedHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    total: int


def default_edges(speeds: np.ndarray, bins: int = DEFAULT_BIN_COUNT) -> np.ndarray:
    """``bins`` uniform bins over [0, max speed] (or [0, 1] when empty/zero)."""
    top = float(np.max(speeds)) if np.size(speeds) else 0.0
    return np.linspace(0.0, top if top > 0 else 1.0, bins + 1)


def bin_speeds(speeds: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Counts over ``[e_i, e_i+1)`` bins; out-of-range values go to the end bins."""
    edges = np.asarray(edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ParameterError("bin edges must be strictly ascending with at least 2 entries")
    nbins = edges.size - 1
    idx = np.clip(np.searchsorted(edges, speeds, side="right") - 1, 0, nbins - 1)
    return np.bincount(idx, minlength=nbins).astype(np.int64)


def roi_speed_histogram(fields: Sequence[FlowField], roi: RegionOfInterest, threshold: float,
                        calibration: Calibration | None = None,
                        bin_edges: Sequence[float] | int | None = None) -> SpeedHistogram:
    vx, vy = roi_vectors(fields, roi, threshold, calibration)
    speeds = np.hypot(vx, vy)
    if bin_edges is None or isinstance(bin_edges, (int, np.integer)):
        edges = default_edges(speeds, int(bin_edges or DEFAULT_BIN_COUNT))
    else:
        edges = np.asarray(bin_edges, dtype=np.float64)
    return SpeedHistogram(edges, bin_speeds(speeds, edges), int(speeds.size))


@dataclass(frozen=True)
class RoiStats:
    count: int
    mean_speed: float
    std_speed: float
    mean_direction_deg: float

    @property
    def empty(self) -> bool:
        return self.count == 0


def roi_stats(fields: Sequence[FlowField], roi: RegionOfInterest, threshold: float,
              calibration: Calibration | None = None) -> RoiStats:
    """Count, mean and population std of speed, and the angle of the vector sum."""
    vx, vy = roi_vectors(fields, roi, threshold, calibration)
    if vx.size == 0:
        return RoiStats(0, math.nan, math.nan, math.nan)
    speeds = np.hypot(vx, vy)
    direction = math.degrees(math.atan2(float(np.sum(vy)), float(np.sum(vx))))
    return RoiStats(int(vx.size), float(np.mean(speeds)), float(np.std(speeds)), direction)


def write_histogram_csv(hist: SpeedHistogram, path_or_file, header_lines: Sequence[str] = ()) -> None:
    """``bin_low_um_s,bin_high_um_s,count`` rows; header only when nothing was counted."""
    def emit(fh):
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_low_um_s", "bin_high_um_s", "count"])
        if hist.total:
            for lo, hi, n in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts):
                writer.writerow([repr(float(lo)), repr(float(hi)), int(n)])
    _with_output(path_or_file, emit)


def write_stats_csv(stats: RoiStats, path_or_file, header_lines: Sequence[str] = ()) -> None:
    def emit(fh):
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["count", "mean_speed_um_s", "std_speed_um_s", "mean_direction_deg"])
        if not stats.empty:
            writer.writerow([stats.count, repr(stats.mean_speed), repr(stats.std_speed),
                             repr(stats.mean_direction_deg)])
    _with_output(path_or_file, emit)


def _with_output(path_or_file, emit) -> None:
    if hasattr(path_or_file, "write"):
        emit(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            emit(fh)


# --- temporal composite ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class Composite:
    """Composite RGB image plus the time-to-colour mapping used to draw it.

    ``earliest_s`` holds, per pixel, the time of the first pair at which the
    pixel is reliable (NaN if never).
    """

    image: np.ndarray
    earliest_s: np.ndarray
    time_end_s: float
    ticks: list[tuple[float, tuple[int, int, int]]]
    stride: int
    gain: float
    threshold: float

    def save(self, path) -> None:
        write_ppm(path, self.image)
        entries = [("kind", "temporal_composite"), ("colormap", "rainbow hue 240->0 deg"),
                   ("time_start_s", 0.0), ("time_end_s", self.time_end_s),
                   ("stride", self.stride), ("gain", self.gain), ("threshold", self.threshold)]
        entries += [(f"tick_{i}", f"{t!r},{c[0]},{c[1]},{c[2]}") for i, (t, c) in enumerate(self.ticks)]
        write_sidecar(path, entries)


def earliest_reliable_pair(fields: Sequence[FlowField], threshold: float) -> np.ndarray:
    """Index of the first reliable pair per pixel, -1 where never reliable."""
    first = np.full(fields[0].u.shape, -1, dtype=np.int64)
    for k, field in enumerate(fields):
        mask = apply_mask(field, threshold) & (first < 0)
        first[mask] = k
    return first


def time_color(t_s: float, time_end_s: float) -> tuple[int, int, int]:
    s = t_s / time_end_s if time_end_s > 0 else 0.0
    return tuple(int(c) for c in rainbow(np.array([s]))[0])


def temporal_composite(fields: Sequence[FlowField], threshold: float, stride: int = 4,
                       gain: float = 1.0) -> Composite:
    """Colour each displayed pixel by the time it first carries a reliable vector.

    Pixels on a ``stride`` lattice anchored at the valid-region origin are
    drawn; each gets an arrow of its earliest reliable vector scaled by
    ``gain`` (pixels per px/frame). Arrows are display-only.
    """
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    if not fields:
        raise ParameterError("no flow fields")
    fps = fields[0].calibration.frame_rate_hz
    times = [f.t_index / fps for f in fields]
    time_end = max(times) - min(times)
    t0 = min(times)
    first = earliest_reliable_pair(fields, threshold)
    earliest = np.where(first >= 0, np.array(times)[np.maximum(first, 0)] - t0, np.nan)

    height, width = first.shape
    image = np.zeros((height, width, 3), dtype=np.uint8)
    ox, oy = fields[0].valid_origin
    lattice = np.zeros_like(first, dtype=bool)
    lattice[oy::stride, ox::stride] = True
    shown = lattice & (first >= 0)
    ys, xs = np.nonzero(shown)
    order = np.lexsort((xs, ys, first[ys, xs]))
    colors = {k: time_color(times[k] - t0, time_end) for k in np.unique(first[shown])}
    for i in order:
        y, x = ys[i], xs[i]
        k = first[y, x]
        u, v = float(fields[k].u[y, x]), float(fields[k].v[y, x])
        draw_segment(image, x, y, x + gain * u, y + gain * v, colors[k])
    for i in order:
        y, x = ys[i], xs[i]
        image[y, x] = colors[first[y, x]]

    ticks = [(times[k] - t0, time_color(times[k] - t0, time_end)) for k in range(len(fields))]
    if time_end == 0:
        ticks = ticks[:1]
    return Composite(image, earliest, time_end, ticks, stride, gain, threshold)


# --- dI/dt ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DidtRender:
    values: np.ndarray
    image: np.ndarray
    limit: float

    def save(self, path) -> None:
        write_ppm(path, self.image)
        write_sidecar(path, [("kind", "didt"), ("units", "intensity/s"),
                             ("colormap", "diverging blue-white-red"),
                             ("limit_low", -self.limit), ("limit_high", self.limit)])


def didt_render(movie: MovieStack, t_index: int) -> DidtRender:
    """(I(t+1) - I(t)) * frame rate on a symmetric blue-white-red scale."""
    if not 0 <= t_index <= movie.frame_count - 2:
        raise ParameterError(f"t_index {t_index} outside [0, {movie.frame_count - 2}]")
    values = (movie.frames[t_index + 1] - movie.frames[t_index]) * movie.calibration.frame_rate_hz
    peak = float(np.max(np.abs(values)))
    limit = peak if peak > 0 else 1.0
    return DidtRender(values, diverging(values / limit), limit)


# --- particle paths -------------------------------------------------------

@dataclass
class PathTrace:
    """Positions (pixels) of a hypothetical particle at each pair boundary."""

    seed: tuple[float, float]
    points: list[tuple[float, float, float]]
    termination: str
    microns_per_pixel: float

    @property
    def displacement_um(self) -> tuple[float, float]:
        _, x0, y0 = self.points[0]
        _, x1, y1 = self.points[-1]
        return (x1 - x0) * self.microns_per_pixel, (y1 - y0) * self.microns_per_pixel

    @property
    def distance_um(self) -> float:
        return math.hypot(*self.displacement_um)

    @property
    def duration_s(self) -> float:
        return self.points[-1][0] - self.points[0][0]


def interpolate_reliable(field: FlowField, reliable: np.ndarray, x: float, y: float):
    """Bilinear (u, v) at (x, y) from reliable corners, renormalizing weights.

    Corners with zero weight are ignored. Returns None when no positively
    weighted corner is reliable.
    """
    x0, y0 = math.floor(x), math.floor(y)
    fx, fy = x - x0, y - y0
    corners = ((x0, y0, (1 - fx) * (1 - fy)), (x0 + 1, y0, fx * (1 - fy)),
               (x0, y0 + 1, (1 - fx) * fy), (x0 + 1, y0 + 1, fx * fy))
    total = su = sv = 0.0
    for cx, cy, w in corners:
        if w <= 0 or not field.in_valid_region(cx, cy) or not reliable[cy, cx]:
            continue
        total += w
        su += w * float(field.u[cy, cx])
        sv += w * float(field.v[cy, cx])
    if total == 0:
        return None
    return su / total, sv / total


def trace_paths(fields: Sequence[FlowField], seeds: Sequence[tuple[float, float]],
                threshold: float, calibration: Calibration | None = None) -> list[PathTrace]:
    """Forward-Euler advection of each seed through the field sequence.

    One step per frame pair: the interpolated velocity (um/s) times the
    frame interval, converted back to pixels.
    """
    cal = _calibration(fields, calibration)
    dt = cal.frame_interval_s
    masks = [apply_mask(f, threshold) for f in fields]
    traces = []
    for seed in seeds:
        x, y = float(seed[0]), float(seed[1])
        if not fields or not fields[0].in_valid_region(x, y):
            raise ParameterError(f"seed ({x}, {y}) lies outside the valid region")
        points = [(0.0, x, y)]
        termination = "end-of-movie"
        for k, (field, mask) in enumerate(zip(fields, masks)):
            vel = interpolate_reliable(field, mask, x, y)
            if vel is None:
                termination = "entered-unreliable"
                break
            x += vel[0] * cal.velocity_scale * dt / cal.microns_per_pixel
            y += vel[1] * cal.velocity_scale * dt / cal.microns_per_pixel
            points.append(((k + 1) * dt, x, y))
            if not field.in_valid_region(x, y):
                termination = "left-valid-region"
                break
        traces.append(PathTrace((float(seed[0]), float(seed[1])), points, termination,
                                cal.microns_per_pixel))
    return traces


def write_traces_csv(traces: Sequence[PathTrace], path_or_file) -> None:
    def emit(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["seed_index", "t_s", "x_px", "y_px", "x_um", "y_um", "termination"])
        for i, trace in enumerate(traces):
            for t, x, y in trace.points:
                writer.writerow([i, repr(t), repr(x), repr(y), repr(x * trace.microns_per_pixel),
                                 repr(y * trace.microns_per_pixel), trace.termination])
    _with_output(path_or_file, emit)


# --- vector pattern matching ----------------------------------------------

@dataclass(frozen=True, eq=False)
class MatchMap:
    """Normalized match responses in [-1, 1]; NaN where undefined."""

    response: np.ndarray
    kernel_shape: tuple[int, int]

    def argmax(self) -> tuple[int, int] | None:
        if not np.any(np.isfinite(self.response)):
            return None
        y, x = np.unravel_index(np.nanargmax(self.response), self.response.shape)
        return int(x), int(y)

    def save(self, path) -> None:
        shown = np.where(np.isfinite(self.response), self.response, 0.0)
        write_ppm(path, diverging(shown))
        peak = self.argmax()
        write_sidecar(path, [("kind", "vector_match"), ("colormap", "diverging blue-white-red"),
                             ("limit_low", -1.0), ("limit_high", 1.0),
                             ("kernel_width", self.kernel_shape[1]),
                             ("kernel_height", self.kernel_shape[0]),
                             ("argmax", "none" if peak is None else f"{peak[0]},{peak[1]}")])


def divergence_kernel(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit vectors pointing away from the centre; the centre vector is zero."""
    if size < 3 or size % 2 == 0:
        raise ParameterError("kernel size must be odd and >= 3")
    r = size // 2
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1].astype(np.float64)
    norm = np.hypot(dx, dy)
    norm[r, r] = 1.0
    return dx / norm, dy / norm


def clifford_match(field: FlowField, kernel_u: np.ndarray, kernel_v: np.ndarray,
                   threshold: float) -> MatchMap:
    """Scalar part of the normalized vector correlation of ``field`` with a kernel.

    response(p) = sum <k_i, f_{p+i}> / (|k| |f|), sums over footprint pixels
    that are reliable. Undefined where the footprint leaves the valid region,
    where fewer than half its pixels are reliable, or where either norm is 0.
    """
    ku = np.nan_to_num(np.asarray(kernel_u, dtype=np.float64))
    kv = np.nan_to_num(np.asarray(kernel_v, dtype=np.float64))
    if ku.shape != kv.shape or ku.ndim != 2:
        raise FormatError("kernel planes must be 2-D and equally shaped")
    kh, kw = ku.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ParameterError("kernel must be odd-sized in both dimensions")
    ew, eh = field.valid_extent
    if kh > eh or kw > ew:
        raise ParameterError(f"kernel {kw}x{kh} larger than the {ew}x{eh} valid region")

    rows_sl, cols_sl = field.valid_slices
    rel = apply_mask(field, threshold)[rows_sl, cols_sl]
    fu = np.where(rel, field.u[rows_sl, cols_sl], 0.0).astype(np.float64)
    fv = np.where(rel, field.v[rows_sl, cols_sl], 0.0).astype(np.float64)
    relf = rel.astype(np.float64)
    energy = fu * fu + fv * fv

    out_h, out_w = eh - kh + 1, ew - kw + 1
    dot = np.zeros((out_h, out_w))
    f_energy = np.zeros_like(dot)
    k_energy = np.zeros_like(dot)
    count = np.zeros_like(dot)
    for i in range(kh):
        for j in range(kw):
            win = (slice(i, i + out_h), slice(j, j + out_w))
            dot += ku[i, j] * fu[win] + kv[i, j] * fv[win]
            f_energy += energy[win]
            k_energy += (ku[i, j] ** 2 + kv[i, j] ** 2) * relf[win]
            count += relf[win]

    defined = (2 * count >= kh * kw) & (f_energy > 0) & (k_energy > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        resp = np.where(defined, dot / np.sqrt(np.where(defined, f_energy * k_energy, 1.0)), np.nan)
    resp = np.clip(resp, -1.0, 1.0)

    response = np.full(field.u.shape, np.nan)
    ox, oy = field.valid_origin
    response[oy + kh // 2: oy + kh // 2 + out_h, ox + kw // 2: ox + kw // 2 + out_w] = resp
    return MatchMap(response, (kh, kw))
