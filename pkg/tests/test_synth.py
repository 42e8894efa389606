import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from caflow.errors import NoMotionError, ParameterError
from caflow.synth import SynthSpec, generate, ground_truth_flow, model_frame, summary


def bilinear(img, x, y):
    x0, y0 = np.floor(x).astype(int), np.floor(y).astype(int)
    fx, fy = x - x0, y - y0
    return ((1 - fx) * (1 - fy) * img[y0, x0] + fx * (1 - fy) * img[y0, x0 + 1]
            + (1 - fx) * fy * img[y0 + 1, x0] + fx * fy * img[y0 + 1, x0 + 1])


class TestGenerate:
    def test_constant(self):
        movie = generate(SynthSpec("constant", width=6, height=5, frame_count=4, level=12))
        assert np.all(movie.frames == 12.0)

    def test_ramp_value(self):
        movie = generate(SynthSpec("space_time_ramp", width=8, height=4, frame_count=3, a=2, b=0, c=-1))
        assert movie.frames[2, 1, 3] == 2 * 3 - 2 == 4

    def test_blob_integer_shift(self):
        spec = SynthSpec("translating_blob", width=32, height=32, frame_count=3, center=(14, 15),
                         velocity=(0.5, 0.0), sigma_px=3.0)
        f = generate(spec).frames
        np.testing.assert_allclose(f[2][:, 1:], f[0][:, :-1], rtol=0, atol=1e-12)

    def test_seeded_noise_reproducible(self):
        spec = SynthSpec("translating_blob", noise_sigma=2.0, seed=11)
        a, b = generate(spec).frames, generate(spec).frames
        assert np.array_equal(a, b)
        c = generate(SynthSpec("translating_blob", noise_sigma=2.0, seed=12)).frames
        assert not np.array_equal(a, c)

    def test_noise_is_zero_mean_with_sigma(self):
        spec = SynthSpec("constant", width=64, height=64, frame_count=4, level=100, noise_sigma=3.0)
        resid = generate(spec).frames - 100
        assert abs(resid.mean()) < 0.1 and resid.std() == pytest.approx(3.0, rel=0.05)

    def test_wave_ring_radius(self):
        spec = SynthSpec("radial_wave", width=64, height=64, frame_count=12, origin=(32, 32),
                         wave_speed=2.0, annulus_width=2.0)
        frame = generate(spec).frames[10]
        assert frame[32, 32 + 20] == pytest.approx(spec.background + spec.amplitude)
        assert frame[32, 32 + 20] > frame[32, 32 + 10]

    @pytest.mark.parametrize("kw", [dict(kind="bogus"), dict(kind="constant", frame_count=1),
                                    dict(kind="constant", width=0), dict(kind="constant", noise_sigma=-1),
                                    dict(kind="translating_blob", sigma_px=0)])
    def test_invalid(self, kw):
        with pytest.raises(ParameterError):
            SynthSpec(**kw)


class TestGroundTruth:
    def test_blob(self):
        spec = SynthSpec("translating_blob", velocity=(0.5, 0.0))
        gt = ground_truth_flow(spec, 0)
        assert gt.support.any() and not gt.ambiguous
        assert np.all(gt.u[gt.support] == 0.5) and np.all(gt.v[gt.support] == 0.0)

    def test_ramp_min_norm(self):
        gt = ground_truth_flow(SynthSpec("space_time_ramp", a=2, b=0, c=-1), 0)
        assert gt.ambiguous
        assert gt.u[0, 0] == pytest.approx(0.5) and gt.v[0, 0] == 0

    def test_wave_45_degrees(self):
        spec = SynthSpec("radial_wave", width=64, height=64, origin=(20, 20), wave_speed=2.0,
                         annulus_width=2.0, frame_count=8)
        gt = ground_truth_flow(spec, 5)
        # pixel (30, 30) sits at 45 deg from the origin
        assert gt.u[30, 30] == pytest.approx(math.sqrt(2)) and gt.v[30, 30] == pytest.approx(math.sqrt(2))

    def test_constant_has_no_motion(self):
        with pytest.raises(NoMotionError):
            ground_truth_flow(SynthSpec("constant"), 0)

    @pytest.mark.parametrize("kind", ["translating_blob", "space_time_ramp", "radial_wave"])
    def test_support_non_empty(self, kind):
        spec = SynthSpec(kind)
        for t in range(spec.frame_count - 1):
            assert ground_truth_flow(spec, t).support.any()

    def test_summary_mentions_speed(self):
        text = summary(SynthSpec("translating_blob", velocity=(1.0, 0.0)))
        assert "10.4 um/s" in text


class TestBrightnessConstancy:
    @settings(max_examples=25, deadline=None)
    @given(st.floats(-1, 1), st.floats(-1, 1), st.floats(2.0, 5.0))
    def test_model_is_exactly_constant_along_motion(self, vx, vy, sigma):
        if math.hypot(vx, vy) > 1:
            vx, vy = vx / 2, vy / 2
        spec = SynthSpec("translating_blob", width=40, height=40, center=(18.3, 19.1),
                         velocity=(vx, vy), sigma_px=sigma)
        a = model_frame(spec, 0.0)
        shifted = SynthSpec("translating_blob", width=40, height=40, center=(18.3 - vx, 19.1 - vy),
                            velocity=(vx, vy), sigma_px=sigma)
        np.testing.assert_allclose(model_frame(shifted, 1.0), a, atol=1e-9 * spec.amplitude)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-1, 1), st.floats(-1, 1), st.floats(2.0, 5.0))
    def test_bilinear_resample_within_interpolation_bound(self, vx, vy, sigma):
        spec = SynthSpec("translating_blob", width=40, height=40, center=(18.3, 19.1),
                         velocity=(vx, vy), sigma_px=sigma, frame_count=2)
        f = generate(spec).frames
        ys, xs = np.mgrid[5:33, 5:33].astype(float)
        moved = bilinear(f[1], xs + vx, ys + vy)
        # bilinear error <= (1/8)(|f_xx| + |f_yy|) for unit spacing; |f_xx| <= A / sigma^2
        bound = 0.25 * spec.amplitude / sigma ** 2
        assert np.max(np.abs(moved - f[0][5:33, 5:33])) <= bound
