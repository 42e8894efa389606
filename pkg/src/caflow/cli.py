"""Command-line interface: ``caflow <subcommand> ...``.

Data go to the declared output files or stdout; diagnostics go to stderr.
Exit status is 0 on success, 1 on a caflow error and 2 on bad usage.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from caflow import analysis
from caflow.errors import CaflowError, ParameterError
from caflow.flow_core import FlowParams, compute_flow_field, threshold_sweep
from caflow.movie_io import (
    Calibration,
    load_movie,
    read_flow_field,
    save_movie,
    write_flow_field,
    write_ppm,
    write_sidecar,
)
from caflow.render import grayscale, mask_boundary, rainbow
from caflow.synth import KINDS, SynthSpec, generate, summary


@dataclass(frozen=True)
class Preset:
    name: str
    frame_rate_hz: float
    window_width: int
    eigenvalue_threshold: float


# Thresholds are in the original camera's raw intensity^2 units and do not
# transfer to other recordings.
PRESETS = {
    "rmc1": Preset("rmc1", 16.4, 11, 11.0),
    "astrocyte": Preset("astrocyte", 8.0, 9, 1.4),
    "neuron": Preset("neuron", 4.0, 11, 0.3),
}


def _warn(message: str) -> None:
    print(f"caflow: warning: {message}", file=sys.stderr)


def _floats(text: str, count: int | None = None) -> list[float]:
    try:
        values = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ParameterError(f"expected comma-separated numbers, got {text!r}") from None
    if count is not None and len(values) != count:
        raise ParameterError(f"expected {count} comma-separated numbers, got {text!r}")
    return values


def _parse_seeds(text: str) -> list[tuple[float, float]]:
    seeds = []
    for part in text.split(";"):
        if part.strip():
            x, y = _floats(part, 2)
            seeds.append((x, y))
    if not seeds:
        raise ParameterError("no seeds given")
    return seeds


def _roi_header(roi: analysis.RegionOfInterest, calibration: Calibration, threshold: float):
    um = calibration.microns_per_pixel
    return [f"roi x={roi.x0} y={roi.y0} w={roi.w} h={roi.h} px "
            f"({roi.w * um:g} x {roi.h * um:g} um)",
            f"threshold {threshold:g}"]


# --- subcommands ------------------------------------------------------------

def cmd_flow(args) -> int:
    if args.preset and args.window is not None:
        raise ParameterError("--preset and --window are mutually exclusive")
    if not args.preset and args.window is None:
        raise ParameterError("one of --preset or --window is required")
    preset = PRESETS[args.preset] if args.preset else None
    window = preset.window_width if preset else args.window
    threshold = args.threshold
    if threshold is None:
        threshold = preset.eigenvalue_threshold if preset else 0.0
    params = FlowParams(window, threshold, args.pre_smooth)
    movie = load_movie(args.movie_dir)
    if preset and abs(movie.calibration.frame_rate_hz - preset.frame_rate_hz) > 1e-9:
        _warn(f"sidecar frame rate {movie.calibration.frame_rate_hz:g} Hz differs from "
              f"preset {preset.name} ({preset.frame_rate_hz:g} Hz); keeping the sidecar value")
    fields = compute_flow_field(movie, params, jobs=args.jobs)
    write_flow_field(fields, args.out)
    first = fields[0]
    print(f"window={window} valid_origin={first.valid_origin[0]},{first.valid_origin[1]} "
          f"valid_extent={first.valid_extent[0]},{first.valid_extent[1]} pairs={len(fields)}")
    for field in fields:
        count = int(np.count_nonzero(field.reliable(threshold)))
        print(f"pair={field.t_index} reliable={count} threshold={threshold:g}")
    return 0


def cmd_mask_sweep(args) -> int:
    fields = read_flow_field(args.flow_file)
    taus = _floats(args.taus)
    if not taus:
        raise ParameterError("--taus is empty")
    if any(b < a for a, b in zip(taus, taus[1:])):
        raise ParameterError("--taus must be in ascending order")
    counts = threshold_sweep(fields, taus)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        out.write("tau,pair,count\n")
        for i, tau in enumerate(taus):
            for field, n in zip(fields, counts[i]):
                out.write(f"{tau!r},{field.t_index},{int(n)}\n")
    finally:
        if args.out:
            out.close()
    if args.render_prefix:
        pairs = (_representative_pairs(len(fields)) if args.pairs is None
                 else [int(p) for p in _floats(args.pairs)])
        for t in pairs:
            if not 0 <= t < len(fields):
                raise ParameterError(f"pair {t} outside [0, {len(fields) - 1}]")
            _render_lambda_min(fields[t], taus, Path(f"{args.render_prefix}_pair{t}.ppm"))
    return 0


def _representative_pairs(n: int) -> list[int]:
    return sorted({0, n // 2, n - 1})


def _render_lambda_min(field, taus, path: Path) -> None:
    lam = np.asarray(field.lambda_min, dtype=np.float64)
    top = float(lam.max())
    image = grayscale(lam, 0.0, top)
    entries = [("kind", "lambda_min"), ("pair", field.t_index),
               ("gray_low", 0.0), ("gray_high", top)]
    for i, tau in enumerate(taus):
        color = rainbow(np.array([i / (len(taus) - 1) if len(taus) > 1 else 0.0]))[0]
        image[mask_boundary(field.reliable(tau))] = color
        entries.append((f"contour_{i}", f"{tau!r},{color[0]},{color[1]},{color[2]}"))
    write_ppm(path, image)
    write_sidecar(path, entries)


def cmd_hist(args) -> int:
    fields = read_flow_field(args.flow_file)
    roi = analysis.RegionOfInterest.parse(args.roi)
    roi.check_inside(fields[0])
    bins = args.bins
    edges = None
    if bins:
        edges = _floats(bins)
        edges = int(edges[0]) if len(edges) == 1 else edges
    hist = analysis.roi_speed_histogram(fields, roi, args.threshold, bin_edges=edges)
    header = _roi_header(roi, fields[0].calibration, args.threshold) + [f"total {hist.total}"]
    analysis.write_histogram_csv(hist, args.out or sys.stdout, header)
    return 0


def cmd_stats(args) -> int:
    fields = read_flow_field(args.flow_file)
    roi = analysis.RegionOfInterest.parse(args.roi)
    roi.check_inside(fields[0])
    stats = analysis.roi_stats(fields, roi, args.threshold)
    analysis.write_stats_csv(stats, args.out or sys.stdout,
                             _roi_header(roi, fields[0].calibration, args.threshold))
    return 0


def cmd_composite(args) -> int:
    fields = read_flow_field(args.flow_file)
    comp = analysis.temporal_composite(fields, args.threshold, args.stride, args.gain)
    comp.save(args.out)
    print(f"legend entries={len(comp.ticks)} time_end_s={comp.time_end_s!r}")
    return 0


def cmd_trace(args) -> int:
    fields = read_flow_field(args.flow_file)
    traces = analysis.trace_paths(fields, _parse_seeds(args.seeds), args.threshold)
    if args.out:
        analysis.write_traces_csv(traces, args.out)
    for i, trace in enumerate(traces):
        dx, dy = trace.displacement_um
        print(f"seed={i} start={trace.seed[0]!r},{trace.seed[1]!r} steps={len(trace.points) - 1} "
              f"duration_s={trace.duration_s!r} displacement_um={dx!r},{dy!r} "
              f"distance_um={trace.distance_um!r} termination={trace.termination}")
    return 0


def cmd_match(args) -> int:
    fields = read_flow_field(args.flow_file)
    if (args.kernel is None) == (args.divergence_kernel is None):
        raise ParameterError("give exactly one of --kernel or --divergence-kernel")
    if args.kernel:
        kernel_fields = read_flow_field(args.kernel)
        if len(kernel_fields) != 1:
            raise ParameterError("kernel file must hold a single pair")
        ku, kv = kernel_fields[0].u, kernel_fields[0].v
    else:
        ku, kv = analysis.divergence_kernel(args.divergence_kernel)
    if not 0 <= args.pair < len(fields):
        raise ParameterError(f"pair {args.pair} outside [0, {len(fields) - 1}]")
    match = analysis.clifford_match(fields[args.pair], ku, kv, args.threshold)
    if args.out:
        match.save(args.out)
    peak = match.argmax()
    if peak is None:
        print("argmax=none")
    else:
        print(f"argmax={peak[0]},{peak[1]} response={float(match.response[peak[1], peak[0]])!r}")
    return 0


def cmd_didt(args) -> int:
    movie = load_movie(args.movie_dir)
    render = analysis.didt_render(movie, args.pair)
    render.save(args.out)
    print(f"limit={render.limit!r} intensity/s")
    return 0


def cmd_synth(args) -> int:
    kwargs = dict(kind=args.kind, width=args.width, height=args.height,
                  frame_count=args.frames, calibration=Calibration(args.fps, args.um_per_px),
                  noise_sigma=args.noise, seed=args.seed)
    optional = {
        "center": args.center and tuple(_floats(args.center, 2)),
        "sigma_px": args.sigma, "amplitude": args.amplitude,
        "velocity": args.velocity and tuple(_floats(args.velocity, 2)),
        "background": args.background,
        "origin": args.origin and tuple(_floats(args.origin, 2)),
        "wave_speed": args.wave_speed, "annulus_width": args.annulus_width,
        "level": args.level,
    }
    kwargs.update({k: v for k, v in optional.items() if v is not None})
    if args.ramp:
        kwargs["a"], kwargs["b"], kwargs["c"] = _floats(args.ramp, 3)
    spec = SynthSpec(**kwargs)
    movie = generate(spec)
    if np.any(movie.frames < -0.5):
        _warn("negative intensities clipped to 0 on write")
    save_movie(movie, args.out)
    print(summary(spec))
    return 0


def cmd_info(args) -> int:
    fields = read_flow_field(args.flow_file)
    first = fields[0]
    cal = first.calibration
    print(f"size={first.width}x{first.height} pairs={len(fields)} "
          f"window={2 * first.valid_origin[0] + 1} "
          f"valid_origin={first.valid_origin[0]},{first.valid_origin[1]} "
          f"valid_extent={first.valid_extent[0]},{first.valid_extent[1]} "
          f"frame_rate_hz={cal.frame_rate_hz!r} microns_per_pixel={cal.microns_per_pixel!r}")
    return 0


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--jobs", type=int, default=1,
                        help="worker threads for flow computation (results do not depend on it)")

    parser = argparse.ArgumentParser(prog="caflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flow", parents=[common], help="compute flow fields for a movie")
    p.add_argument("movie_dir")
    p.add_argument("--window", type=int)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--threshold", type=float)
    p.add_argument("--pre-smooth", type=float, default=0.0, dest="pre_smooth")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("mask-sweep", parents=[common], help="reliable counts per threshold")
    p.add_argument("flow_file")
    p.add_argument("--taus", required=True, help="ascending comma-separated thresholds")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.add_argument("--render-prefix", help="write <prefix>_pair<t>.ppm lambda_min images")
    p.add_argument("--pairs", help="pairs to render (default first, middle, last)")
    p.set_defaults(func=cmd_mask_sweep)

    for name, func, help_text in (("hist", cmd_hist, "ROI speed histogram"),
                                  ("stats", cmd_stats, "ROI speed statistics")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("flow_file")
        p.add_argument("--roi", required=True, help="x,y,w,h in pixels")
        p.add_argument("--threshold", type=float, default=0.0)
        if name == "hist":
            p.add_argument("--bins", help="bin count or comma-separated edges in um/s")
        p.add_argument("--out", help="CSV path (default stdout)")
        p.set_defaults(func=func)

    p = sub.add_parser("composite", parents=[common], help="temporal composite image")
    p.add_argument("flow_file")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--gain", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_composite)

    p = sub.add_parser("trace", parents=[common], help="trace hypothetical particles")
    p.add_argument("flow_file")
    p.add_argument("--seeds", required=True, help="x1,y1;x2,y2;...")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--out", help="CSV of trace points")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("match", parents=[common], help="vector-pattern match map")
    p.add_argument("flow_file")
    p.add_argument("--kernel", help="single-pair CAFL kernel file")
    p.add_argument("--divergence-kernel", type=int, dest="divergence_kernel",
                   help="use an outward unit-vector kernel of this odd size")
    p.add_argument("--pair", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--out", help="PPM of the response map")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("didt", parents=[common], help="render dI/dt for one frame pair")
    p.add_argument("movie_dir")
    p.add_argument("--pair", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_didt)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic movie")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--fps", type=float, default=8.0)
    p.add_argument("--um-per-px", type=float, default=1.3, dest="um_per_px")
    p.add_argument("--center")
    p.add_argument("--sigma", type=float)
    p.add_argument("--amplitude", type=float)
    p.add_argument("--velocity")
    p.add_argument("--background", type=float)
    p.add_argument("--ramp", help="a,b,c coefficients")
    p.add_argument("--origin")
    p.add_argument("--wave-speed", type=float, dest="wave_speed")
    p.add_argument("--annulus-width", type=float, dest="annulus_width")
    p.add_argument("--level", type=float)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("info", parents=[common], help="describe a flow file")
    p.add_argument("flow_file")
    p.set_defaults(func=cmd_info)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CaflowError as exc:
        print(f"caflow: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"caflow: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
