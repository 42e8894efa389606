import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from caflow.analysis import (
    RegionOfInterest,
    bin_speeds,
    clifford_match,
    didt_render,
    divergence_kernel,
    earliest_reliable_pair,
    roi_speed_histogram,
    roi_stats,
    temporal_composite,
    time_color,
    trace_paths,
    write_histogram_csv,
)
from caflow.errors import ParameterError
from caflow.flow_core import FlowParams, compute_flow_field
from caflow.movie_io import Calibration, FlowField, MovieStack, read_ppm, sidecar_path
from caflow.render import rainbow
from caflow.synth import SynthSpec, generate, ground_truth_flow

from conftest import make_field, uniform_field

CAL = Calibration(8.0, 1.3)


@pytest.fixture(scope="module")
def wave():
    spec = SynthSpec("radial_wave", width=64, height=64, frame_count=14, origin=(31.5, 31.5),
                     wave_speed=1.0, annulus_width=2.5)
    fields = compute_flow_field(generate(spec), FlowParams(9))
    # the ring flattens as it grows, so lambda_min falls with radius
    tau = 1e-3 * max(f.lambda_min.max() for f in fields)
    return spec, fields, tau


class TestHistogram:
    def test_all_masked(self):
        f = make_field(np.zeros((12, 12)), 0.0, 0.0)
        h = roi_speed_histogram([f], RegionOfInterest(0, 0, 10, 10), 0.0, CAL, [0, 5, 10])
        assert h.total == 0 and h.counts.tolist() == [0, 0]

    def test_single_vector(self):
        u = np.full((5, 5), np.nan)
        lam = np.zeros((5, 5))
        u[2, 2], lam[2, 2] = 9.0 / 10.4, 1.0
        f = make_field(u, 0.0, lam)
        h = roi_speed_histogram([f], RegionOfInterest(0, 0, 5, 5), 0.5, CAL, [0, 5, 10])
        assert h.counts.tolist() == [0, 1] and h.total == 1

    def test_end_bins_clamp(self):
        assert bin_speeds(np.array([-1.0, 0.0, 4.9, 5.0, 10.0, 99.0]), [0, 5, 10]).tolist() == [3, 3]

    def test_rejects_bad_edges(self):
        with pytest.raises(ParameterError):
            bin_speeds(np.array([1.0]), [0, 5, 5])

    def test_rigid_translation_single_bin(self):
        fields = [uniform_field(20, 20, 1.0, 0.0, t_index=t) for t in range(4)]
        h = roi_speed_histogram(fields, RegionOfInterest(2, 3, 10, 10), 1.0, CAL,
                                np.arange(0, 21, 1.0))
        assert h.total == 400
        assert h.counts[10] == 400 and h.counts.sum() == 400

    def test_default_edges(self):
        fields = [uniform_field(8, 8, 0.5, 0.0)]
        h = roi_speed_histogram(fields, RegionOfInterest(0, 0, 8, 8), 1.0)
        assert len(h.bin_edges) == 21 and h.bin_edges[-1] == pytest.approx(5.2)
        assert h.counts[-1] == 64

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0, 3))
    def test_conservation(self, seed, tau):
        rng = np.random.default_rng(seed)
        fields = [make_field(rng.normal(size=(10, 10)), rng.normal(size=(10, 10)),
                             rng.exponential(1.5, size=(10, 10)), t_index=t) for t in range(3)]
        roi = RegionOfInterest(2, 1, 6, 7)
        h = roi_speed_histogram(fields, roi, tau, CAL, [0, 1, 2, 5])
        manual = sum(1 for f in fields for y in range(1, 8) for x in range(2, 8)
                     if f.lambda_min[y, x] > tau)
        assert h.total == manual == h.counts.sum()

    def test_roi_outside_image(self):
        with pytest.raises(ParameterError):
            roi_speed_histogram([uniform_field(8, 8, 1, 0)], RegionOfInterest(5, 5, 5, 5), 0.0)

    def test_csv_header_only_when_empty(self, tmp_path):
        f = make_field(np.zeros((12, 12)), 0.0, 0.0)
        h = roi_speed_histogram([f], RegionOfInterest(0, 0, 10, 10), 0.0, CAL)
        write_histogram_csv(h, tmp_path / "h.csv", ["roi"])
        assert (tmp_path / "h.csv").read_text() == "# roi\nbin_low_um_s,bin_high_um_s,count\n"


class TestStats:
    def test_empty(self):
        s = roi_stats([make_field(np.zeros((4, 4)), 0.0, 0.0)], RegionOfInterest(0, 0, 4, 4), 0.0)
        assert s.empty and s.count == 0 and math.isnan(s.mean_speed)

    def test_two_vectors(self):
        u = np.full((1, 2), 0.0)
        u[0, 0], u[0, 1] = 3.0 / 10.4, 5.0 / 10.4
        s = roi_stats([make_field(u, 0.0, 1.0)], RegionOfInterest(0, 0, 2, 1), 0.0, CAL)
        assert s.count == 2
        assert s.mean_speed == pytest.approx(4.0) and s.mean_direction_deg == pytest.approx(0.0)
        assert s.std_speed == pytest.approx(1.0)

    def test_direction_downward(self):
        s = roi_stats([uniform_field(3, 3, 0.0, 1.0)], RegionOfInterest(0, 0, 3, 3), 0.0)
        assert s.mean_direction_deg == pytest.approx(90.0)

    def test_synthetic_translation_interior(self):
        spec = SynthSpec("translating_blob", width=48, height=48, frame_count=5, center=(22, 22),
                         velocity=(0.6, 0.2), sigma_px=3.0)
        fields = compute_flow_field(generate(spec), FlowParams(11))
        tau = 0.05 * max(f.lambda_min.max() for f in fields)
        s = roi_stats(fields, RegionOfInterest(18, 18, 8, 8), tau)
        assert s.count > 50
        assert s.std_speed < 0.05 * s.mean_speed
        assert s.mean_speed == pytest.approx(math.hypot(0.6, 0.2) * 10.4, rel=0.05)


class TestComposite:
    def test_single_time_single_color(self):
        lam = np.zeros((16, 16))
        lam[4:12, 4:12] = 5.0
        fields = [make_field(np.full((16, 16), 0.5), 0.0, lam, t_index=0),
                  make_field(np.full((16, 16), 0.5), 0.0, 0.0, t_index=1)]
        comp = temporal_composite(fields, 1.0, stride=2, gain=2.0)
        colors = {tuple(c) for c in comp.image.reshape(-1, 3) if c.any()}
        assert colors == {time_color(0.0, comp.time_end_s)}

    def test_endpoint_colors(self):
        n = 5
        lam_a = np.zeros((20, 20))
        lam_a[2:6, 2:6] = 5
        lam_b = np.zeros((20, 20))
        lam_b[12:18, 12:18] = 5
        fields = []
        for t in range(n):
            lam = lam_a if t == 0 else lam_b if t == n - 1 else np.zeros((20, 20))
            fields.append(make_field(np.zeros((20, 20)), 0.0, lam, t_index=t))
        comp = temporal_composite(fields, 1.0, stride=1, gain=0.0)
        assert tuple(comp.image[3, 3]) == tuple(rainbow(np.array([0.0]))[0])
        assert tuple(comp.image[14, 14]) == tuple(rainbow(np.array([1.0]))[0])
        assert comp.time_end_s == pytest.approx((n - 1) / 8.0)

    def test_stride_lattice(self):
        fields = [make_field(np.zeros((12, 12)), 0.0, 5.0, origin=(1, 1), extent=(10, 10))]
        comp = temporal_composite(fields, 1.0, stride=4, gain=0.0)
        ys, xs = np.nonzero(comp.image.any(axis=2))
        assert set(xs) == {1, 5, 9} and set(ys) == {1, 5, 9}

    def test_radial_wave_time_increases_with_radius(self, wave):
        spec, fields, tau = wave
        first = earliest_reliable_pair(fields, tau)
        y, x = np.mgrid[0:64, 0:64]
        r = np.hypot(x + 0.5 - spec.origin[0], y + 0.5 - spec.origin[1])
        medians = []
        for lo in range(6, 21, 3):
            sel = (r >= lo) & (r < lo + 3) & (first >= 0)
            medians.append(np.median(first[sel]))
        assert all(b > a for a, b in zip(medians, medians[1:]))

    def test_deterministic_bytes(self, wave, tmp_path):
        _, fields, tau = wave
        temporal_composite(fields, tau, 3, 2.0).save(tmp_path / "a.ppm")
        temporal_composite(fields, tau, 3, 2.0).save(tmp_path / "b.ppm")
        assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()
        meta = sidecar_path(tmp_path / "a.ppm").read_text()
        assert "time_end_s=" in meta and "tick_0=0.0," in meta

    def test_bad_stride(self):
        with pytest.raises(ParameterError):
            temporal_composite([uniform_field(4, 4, 1, 0)], 0.0, stride=0)


class TestDidt:
    def test_identical_frames_midpoint(self):
        movie = MovieStack(np.full((2, 4, 4), 10.0), CAL)
        r = didt_render(movie, 0)
        assert np.all(r.values == 0) and np.all(r.image == 255)

    def test_positive_step(self, tmp_path):
        frames = np.zeros((2, 6, 6))
        frames[1, 2:4, 2:4] = 8.0
        r = didt_render(MovieStack(frames, CAL), 0)
        assert np.all(r.values[2:4, 2:4] == 64.0)
        assert r.limit == 64.0
        assert tuple(r.image[2, 2]) == (255, 0, 0)
        assert tuple(r.image[0, 0]) == (255, 255, 255)
        r.save(tmp_path / "d.ppm")
        assert np.array_equal(read_ppm(tmp_path / "d.ppm"), r.image)
        assert "limit_high=64.0" in sidecar_path(tmp_path / "d.ppm").read_text()

    def test_negative_side(self):
        frames = np.full((2, 3, 3), 5.0)
        frames[1, 0, 0] = 1.0
        r = didt_render(MovieStack(frames, CAL), 0)
        assert tuple(r.image[0, 0]) == (0, 0, 255)


class TestTrace:
    def test_uniform_field_exact(self):
        fields = [uniform_field(40, 10, 1.0, 0.0, t_index=t) for t in range(16)]
        (tr,) = trace_paths(fields, [(2.0, 5.0)], 1.0)
        assert tr.termination == "end-of-movie"
        assert len(tr.points) == 17
        assert abs(tr.displacement_um[0] - 20.8) < 1e-9 and tr.displacement_um[1] == 0
        times = [p[0] for p in tr.points]
        assert np.allclose(np.diff(times), 1 / 8.0) and all(np.diff(times) > 0)

    def test_all_masked(self):
        fields = [make_field(np.zeros((10, 10)), 0.0, 0.0)]
        (tr,) = trace_paths(fields, [(4.0, 4.0)], 0.0)
        assert len(tr.points) == 1 and tr.termination == "entered-unreliable"

    def test_leaves_valid_region(self):
        fields = [uniform_field(10, 10, 2.0, 0.0, t_index=t) for t in range(10)]
        (tr,) = trace_paths(fields, [(5.0, 5.0)], 0.0)
        assert tr.termination == "left-valid-region"
        assert tr.points[-1][1] > 9

    def test_seed_outside(self):
        with pytest.raises(ParameterError):
            trace_paths([uniform_field(10, 10, 1, 0)], [(20.0, 1.0)], 0.0)

    def test_renormalizes_over_reliable_neighbours(self):
        u = np.full((6, 6), 1.0)
        u[:, 3] = 100.0
        lam = np.full((6, 6), 5.0)
        lam[:, 3] = 0.0
        fields = [make_field(u, 0.0, lam)]
        (tr,) = trace_paths(fields, [(2.5, 2.0)], 1.0)
        assert tr.points[1][1] == pytest.approx(3.5)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_step_bound(self, seed):
        rng = np.random.default_rng(seed)
        fields = [make_field(rng.normal(0, 0.5, (20, 20)), rng.normal(0, 0.5, (20, 20)),
                             rng.uniform(0, 2, (20, 20)), t_index=t) for t in range(6)]
        seeds = [tuple(rng.uniform(3, 16, 2)) for _ in range(4)]
        for tr in trace_paths(fields, seeds, 0.5):
            for k, (a, b) in enumerate(zip(tr.points, tr.points[1:])):
                f = fields[k]
                m = f.reliable(0.5)
                vmax = np.max(np.hypot(f.u[m], f.v[m]))
                assert math.hypot(b[1] - a[1], b[2] - a[2]) <= vmax + 1e-12

    def test_radial_wave_moves_outward(self, wave):
        spec, fields, tau = wave
        ox, oy = spec.origin
        seed = (ox - 0.5 + 4.0, oy - 0.5)
        (tr,) = trace_paths(fields[4:], [seed], tau)
        assert len(tr.points) >= 4
        radii = [math.hypot(x + 0.5 - ox, y + 0.5 - oy) for _, x, y in tr.points]
        assert all(b > a for a, b in zip(radii, radii[1:]))


def rot90_field(f: FlowField) -> FlowField:
    """Rotate planes by np.rot90 and vectors (u, v) -> (v, -u)."""
    h, w = f.u.shape
    ox, oy = f.valid_origin
    ew, eh = f.valid_extent
    return FlowField(np.rot90(f.v).copy(), np.rot90(-f.u).copy(), np.rot90(f.lambda_min).copy(),
                     np.rot90(f.lambda_max).copy(), (oy, w - ox - ew), (eh, ew), f.calibration)


class TestClifford:
    def test_self_and_negated(self):
        rng = np.random.default_rng(2)
        ku, kv = rng.normal(size=(5, 5)), rng.normal(size=(5, 5))
        u = rng.normal(size=(15, 15))
        v = rng.normal(size=(15, 15))
        u[5:10, 6:11], v[5:10, 6:11] = ku, kv
        f = make_field(u, v, 1.0)
        m = clifford_match(f, ku, kv, 0.0)
        assert abs(m.response[7, 8] - 1.0) < 1e-9
        assert m.argmax() == (8, 7)
        mneg = clifford_match(make_field(-u, -v, 1.0), ku, kv, 0.0)
        assert abs(mneg.response[7, 8] + 1.0) < 1e-9

    def test_radial_wave_argmax_near_origin(self, wave):
        spec, fields, tau = wave
        ku, kv = divergence_kernel(15)
        m = clifford_match(fields[6], ku, kv, tau)
        x, y = m.argmax()
        assert math.hypot(x + 0.5 - spec.origin[0], y + 0.5 - spec.origin[1]) <= 2.0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_range(self, seed):
        rng = np.random.default_rng(seed)
        f = make_field(rng.normal(size=(14, 12)), rng.normal(size=(14, 12)),
                       rng.uniform(0, 2, (14, 12)))
        m = clifford_match(f, rng.normal(size=(3, 5)), rng.normal(size=(3, 5)), 0.5)
        vals = m.response[np.isfinite(m.response)]
        assert np.all(vals >= -1) and np.all(vals <= 1)

    def test_rotation_consistency(self):
        rng = np.random.default_rng(8)
        f = make_field(rng.normal(size=(13, 17)), rng.normal(size=(13, 17)),
                       rng.uniform(0, 2, (13, 17)), origin=(1, 2), extent=(15, 10))
        ku, kv = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
        m = clifford_match(f, ku, kv, 0.3)
        m_rot = clifford_match(rot90_field(f), np.rot90(kv), np.rot90(-ku), 0.3)
        np.testing.assert_allclose(m_rot.response, np.rot90(m.response), rtol=1e-12, atol=1e-12)

    def test_sentinels(self):
        lam = np.zeros((11, 11))
        lam[:, :3] = 5.0
        m = clifford_match(make_field(np.ones((11, 11)), 0.0, lam), *divergence_kernel(5), 1.0)
        assert np.all(np.isnan(m.response[:, 6:]))
        assert np.all(np.isnan(m.response[:2]))  # footprint overhangs

    def test_kernel_errors(self):
        f = make_field(np.ones((6, 6)), 0.0, 1.0)
        with pytest.raises(ParameterError):
            clifford_match(f, np.ones((7, 7)), np.ones((7, 7)), 0.0)
        with pytest.raises(ParameterError):
            clifford_match(f, np.ones((4, 3)), np.ones((4, 3)), 0.0)

    def test_divergence_kernel(self):
        ku, kv = divergence_kernel(5)
        assert ku[2, 2] == 0 and kv[2, 2] == 0
        assert ku[2, 4] == 1 and kv[4, 2] == 1
        norms = np.hypot(ku, kv)
        norms[2, 2] = 1
        assert np.allclose(norms, 1)
