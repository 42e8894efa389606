"""Movie stacks, flow fields and their on-disk formats.

Movies live on disk as a directory of binary PGM frames
(``frame_000000.pgm``, ``frame_000001.pgm``, ...) plus a ``calibration.txt``
sidecar holding ``frame_rate_hz=<real>`` and ``microns_per_pixel=<real>``.
Intensities are widened to float64 on load and never rescaled, so eigenvalue
thresholds stay in raw camera units.

Flow fields are stored in the little-endian "CAFL" container::

    magic        4 bytes  b"CAFL"
    version      u32      1
    width        u32
    height       u32
    pair_count   u32
    valid_origin u32, u32   (x, y)
    valid_extent u32, u32   (w, h)
    calibration  f64, f64   (frame_rate_hz, microns_per_pixel)
    pair_count x 4 row-major f32 planes: u_x, v_y, lambda_min, lambda_max

Arrays are indexed ``[y, x]`` everywhere.
"""

from __future__ import annotations

import csv
import math
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from caflow.errors import (
    CalibrationError,
    FormatError,
    InsufficientDataError,
    ParameterError,
    TruncatedFileError,
)

FRAME_PATTERN = re.compile(r"^frame_(\d{6})\.pgm$")
CALIBRATION_FILE = "calibration.txt"

CAFL_MAGIC = b"CAFL"
CAFL_VERSION = 1
_CAFL_HEADER = struct.Struct("<4s8I2d")

CSV_HEADER = ["t_index", "x", "y", "u_px_per_frame", "v_px_per_frame",
              "lambda_min", "lambda_max"]


@dataclass(frozen=True)
class Calibration:
    """Physical scale of a recording."""

    frame_rate_hz: float
    microns_per_pixel: float

    def __post_init__(self):
        for name in ("frame_rate_hz", "microns_per_pixel"):
            try:
                value = float(getattr(self, name))
            except (TypeError, ValueError):
                raise CalibrationError(f"{name} must be a real number") from None
            if not (math.isfinite(value) and value > 0):
                raise CalibrationError(f"{name} must be positive and finite, got {value!r}")
            object.__setattr__(self, name, value)

    @property
    def frame_interval_s(self) -> float:
        return 1.0 / self.frame_rate_hz

    @property
    def velocity_scale(self) -> float:
        """Factor converting pixels/frame to microns/second."""
        return self.frame_rate_hz * self.microns_per_pixel


@dataclass(frozen=True, eq=False)
class MovieStack:
    """Frame-major float64 intensity stack of shape (frame_count, height, width)."""

    frames: np.ndarray
    calibration: Calibration

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3:
            raise FormatError(f"frames must be 3-D (t, y, x), got shape {frames.shape}")
        if frames.shape[0] < 2:
            raise InsufficientDataError("a movie needs at least 2 frames")
        if frames.shape[1] < 1 or frames.shape[2] < 1:
            raise FormatError("frames must be non-empty")
        if not np.all(np.isfinite(frames)):
            raise FormatError("frames contain non-finite intensities")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def scaled(self, factor: float) -> "MovieStack":
        return MovieStack(self.frames * factor, self.calibration)


@dataclass(eq=False)
class FlowField:
    """Flow vectors and structure-tensor eigenvalues for one frame pair.

    All planes have the source movie's (height, width). Outside the valid
    rectangle ``u``/``v`` are NaN and both eigenvalues are 0; inside it,
    NaN vectors mark pixels whose 2x2 solve was skipped.
    """

    u: np.ndarray
    v: np.ndarray
    lambda_min: np.ndarray
    lambda_max: np.ndarray
    valid_origin: tuple[int, int]
    valid_extent: tuple[int, int]
    calibration: Calibration
    t_index: int = 0

    def __post_init__(self):
        shape = np.shape(self.u)
        for name in ("v", "lambda_min", "lambda_max"):
            if np.shape(getattr(self, name)) != shape or len(shape) != 2:
                raise FormatError("flow planes must be 2-D and share one shape")
        self.valid_origin = (int(self.valid_origin[0]), int(self.valid_origin[1]))
        self.valid_extent = (int(self.valid_extent[0]), int(self.valid_extent[1]))
        ox, oy = self.valid_origin
        ew, eh = self.valid_extent
        if ox < 0 or oy < 0 or ew < 0 or eh < 0 or ox + ew > shape[1] or oy + eh > shape[0]:
            raise FormatError("valid region does not fit inside the planes")

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def valid_slices(self) -> tuple[slice, slice]:
        ox, oy = self.valid_origin
        ew, eh = self.valid_extent
        return slice(oy, oy + eh), slice(ox, ox + ew)

    def valid_mask(self) -> np.ndarray:
        mask = np.zeros(self.u.shape, dtype=bool)
        mask[self.valid_slices] = True
        return mask

    def in_valid_region(self, x: float, y: float) -> bool:
        ox, oy = self.valid_origin
        ew, eh = self.valid_extent
        return ox <= x <= ox + ew - 1 and oy <= y <= oy + eh - 1

    def reliable(self, threshold: float) -> np.ndarray:
        """Boolean plane of vectors passing ``lambda_min > threshold``."""
        return (self.lambda_min > threshold) & np.isfinite(self.u) & np.isfinite(self.v)

    def equals(self, other: "FlowField") -> bool:
        """Bit-level equality of geometry, calibration and planes."""
        if (self.valid_origin, self.valid_extent, self.calibration, self.t_index) != (
                other.valid_origin, other.valid_extent, other.calibration, other.t_index):
            return False
        return all(
            np.array_equal(np.asarray(getattr(self, n)), np.asarray(getattr(other, n)), equal_nan=True)
            and np.asarray(getattr(self, n)).dtype == np.asarray(getattr(other, n)).dtype
            for n in ("u", "v", "lambda_min", "lambda_max")
        )


# --- Netpbm ---------------------------------------------------------------

def _netpbm_header(data: bytes, magic: bytes) -> tuple[list[int], int]:
    """Parse ``magic width height maxval`` allowing ``#`` comments.

    Returns the three integers and the offset of the first sample byte.
    """
    if data[:2] != magic:
        raise FormatError(f"expected netpbm magic {magic!r}, got {data[:2]!r}")
    pos = 2
    values = []
    while len(values) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("malformed netpbm header")
        values.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("malformed netpbm header")
    return values, pos + 1


def read_pgm(path) -> np.ndarray:
    """Read a binary "P5" PGM; 16-bit samples are big-endian."""
    data = Path(path).read_bytes()
    (width, height, maxval), offset = _netpbm_header(data, b"P5")
    if not 0 < maxval < 65536:
        raise FormatError(f"invalid PGM maxval {maxval}")
    dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    count = width * height
    if len(data) - offset < count * dtype.itemsize:
        raise TruncatedFileError(f"{path}: PGM payload shorter than {width}x{height}")
    pixels = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    return pixels.reshape(height, width)


def write_pgm(path, image: np.ndarray, maxval: int | None = None) -> None:
    """Write integer-valued ``image`` as a binary PGM (8-bit when it fits)."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise FormatError("PGM images are 2-D")
    if np.any(image < 0) or not np.all(np.isfinite(image)):
        raise FormatError("PGM samples must be finite and non-negative")
    if maxval is None:
        maxval = 255 if image.max(initial=0) <= 255 else 65535
    if image.max(initial=0) > maxval:
        raise FormatError(f"sample exceeds maxval {maxval}")
    dtype = "u1" if maxval < 256 else ">u2"
    height, width = image.shape
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + np.rint(image).astype(dtype).tobytes())


def write_ppm(path, rgb: np.ndarray) -> None:
    """Write an (h, w, 3) uint8 array as binary "P6"."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise FormatError("PPM data must be uint8 with shape (h, w, 3)")
    height, width = rgb.shape[:2]
    Path(path).write_bytes(f"P6\n{width} {height}\n255\n".encode("ascii") + rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (width, height, maxval), offset = _netpbm_header(data, b"P6")
    if maxval != 255:
        raise FormatError("only 8-bit PPM is supported")
    if len(data) - offset < width * height * 3:
        raise TruncatedFileError(f"{path}: PPM payload truncated")
    return np.frombuffer(data, dtype=np.uint8, count=width * height * 3,
                         offset=offset).reshape(height, width, 3)


def sidecar_path(image_path) -> Path:
    """``out/composite.ppm`` -> ``out/composite.meta.txt``."""
    image_path = Path(image_path)
    return image_path.with_name(image_path.stem + ".meta.txt")


def write_sidecar(image_path, entries: Sequence[tuple[str, object]]) -> Path:
    path = sidecar_path(image_path)
    path.write_text("".join(f"{key}={value}\n" for key, value in entries))
    return path


# --- movies ---------------------------------------------------------------

def read_calibration(path) -> Calibration:
    path = Path(path)
    if not path.is_file():
        raise CalibrationError(f"missing calibration sidecar {path}")
    values = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CalibrationError(f"malformed calibration line {line!r}")
        try:
            values[key.strip()] = float(value)
        except ValueError:
            raise CalibrationError(f"non-numeric calibration value {line!r}") from None
    try:
        return Calibration(values["frame_rate_hz"], values["microns_per_pixel"])
    except KeyError as missing:
        raise CalibrationError(f"calibration sidecar lacks {missing}") from None


def write_calibration(path, calibration: Calibration) -> None:
    Path(path).write_text(
        f"frame_rate_hz={calibration.frame_rate_hz!r}\n"
        f"microns_per_pixel={calibration.microns_per_pixel!r}\n"
    )


def load_movie(directory_path) -> MovieStack:
    """Load ``frame_NNNNNN.pgm`` files and ``calibration.txt`` from a directory."""
    directory = Path(directory_path)
    calibration = read_calibration(directory / CALIBRATION_FILE)
    indexed = []
    for entry in directory.iterdir():
        match = FRAME_PATTERN.match(entry.name)
        if match:
            indexed.append((int(match.group(1)), entry))
    indexed.sort()
    if len(indexed) < 2:
        raise InsufficientDataError(f"{directory}: need at least 2 frames, found {len(indexed)}")
    frames = [read_pgm(p) for _, p in indexed]
    shape = frames[0].shape
    for (_, p), frame in zip(indexed, frames):
        if frame.shape != shape:
            raise FormatError(f"{p.name} is {frame.shape[1]}x{frame.shape[0]}, "
                              f"expected {shape[1]}x{shape[0]}")
    return MovieStack(np.stack(frames).astype(np.float64), calibration)


def save_movie(movie: MovieStack, directory_path, maxval: int | None = None) -> None:
    """Write a movie as PGM frames plus sidecar.

    Intensities are rounded to integers and clipped into ``[0, maxval]``;
    maxval defaults to 255 when the rounded data fit in 8 bits, else 65535.
    """
    directory = Path(directory_path)
    directory.mkdir(parents=True, exist_ok=True)
    quantized = np.rint(movie.frames)
    if maxval is None:
        maxval = 255 if quantized.max() <= 255 else 65535
    quantized = np.clip(quantized, 0, maxval)
    for index, frame in enumerate(quantized):
        write_pgm(directory / f"frame_{index:06d}.pgm", frame, maxval=maxval)
    write_calibration(directory / CALIBRATION_FILE, movie.calibration)


# --- flow files -----------------------------------------------------------

def write_flow_field(fields: Sequence[FlowField], path) -> None:
    """Serialize a flow-field sequence to CAFL.

    Planes are stored as float32; float64 fields are rounded on write.
    """
    fields = list(fields)
    if not fields:
        raise ParameterError("cannot write an empty field sequence")
    first = fields[0]
    for field in fields[1:]:
        if (field.u.shape, field.valid_origin, field.valid_extent, field.calibration) != (
                first.u.shape, first.valid_origin, first.valid_extent, first.calibration):
            raise FormatError("all fields in a sequence must share geometry and calibration")
    header = _CAFL_HEADER.pack(
        CAFL_MAGIC, CAFL_VERSION, first.width, first.height, len(fields),
        *first.valid_origin, *first.valid_extent,
        first.calibration.frame_rate_hz, first.calibration.microns_per_pixel,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for field in fields:
            for plane in (field.u, field.v, field.lambda_min, field.lambda_max):
                fh.write(np.ascontiguousarray(plane, dtype="<f4").tobytes())


def read_flow_field(path) -> list[FlowField]:
    """Read a CAFL file; planes come back as float32 arrays."""
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != CAFL_MAGIC:
        raise FormatError(f"{path}: not a CAFL file")
    if len(data) < _CAFL_HEADER.size:
        raise TruncatedFileError(f"{path}: header truncated")
    (_, version, width, height, pairs, ox, oy, ew, eh,
     rate, um_per_px) = _CAFL_HEADER.unpack_from(data)
    if version != CAFL_VERSION:
        raise FormatError(f"{path}: unsupported CAFL version {version}")
    plane_bytes = width * height * 4
    if len(data) < _CAFL_HEADER.size + pairs * 4 * plane_bytes:
        raise TruncatedFileError(f"{path}: header declares {pairs} pairs, payload is short")
    calibration = Calibration(rate, um_per_px)
    offset = _CAFL_HEADER.size
    fields = []
    for t in range(pairs):
        planes = []
        for _ in range(4):
            plane = np.frombuffer(data, dtype="<f4", count=width * height, offset=offset)
            planes.append(plane.reshape(height, width).astype(np.float32))
            offset += plane_bytes
        fields.append(FlowField(*planes, valid_origin=(ox, oy), valid_extent=(ew, eh),
                                calibration=calibration, t_index=t))
    return fields


def export_csv(fields: Sequence[FlowField], threshold: float, path) -> int:
    """Write reliable vectors (``lambda_min > threshold``) as CSV rows.

    Rows are ordered by t, then y, then x. Returns the number of data rows.
    """
    rows = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for field in fields:
            ys, xs = np.nonzero(field.reliable(threshold))
            for y, x in zip(ys, xs):
                writer.writerow([field.t_index, int(x), int(y),
                                 _fmt(field.u[y, x]), _fmt(field.v[y, x]),
                                 _fmt(field.lambda_min[y, x]), _fmt(field.lambda_max[y, x])])
                rows += 1
    return rows


def _fmt(value) -> str:
    text = repr(float(value))
    return text[:-2] if text.endswith(".0") else text
