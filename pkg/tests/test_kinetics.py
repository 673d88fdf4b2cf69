import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from petkin import (
    DynamicImage,
    FengAif,
    FineGrid,
    KineticParams,
    NumericError,
    ParametricMaps,
    SampledCurve,
    ValidationError,
    forward_model,
    forward_volume,
    impulse_response,
    ki,
    make_schedule,
    tissue_response,
)

P_REF = KineticParams(K1=0.5, k2=0.3, k3=0.1, Vb=0.0)
ALPHA = 0.4  # k2 + k3, per minute


def step_curve(grid: FineGrid) -> SampledCurve:
    return SampledCurve(times=grid.times(), values=np.ones(grid.n))


def ct_step_oracle(t_min: np.ndarray) -> np.ndarray:
    """Closed-form step response: (K1/a)(k3 t + (k2/a)(1 - e^{-a t}))."""
    return (0.5 / ALPHA) * (0.1 * t_min + (0.3 / ALPHA) * (1.0 - np.exp(-ALPHA * t_min)))


def ct_exp_oracle(t_min: np.ndarray, lam: float = 1.0) -> np.ndarray:
    """Closed-form response to C_A = e^{-lam t}."""
    return (0.5 / ALPHA) * (
        0.1 * (1.0 - np.exp(-lam * t_min)) / lam
        + 0.3 * (np.exp(-lam * t_min) - np.exp(-ALPHA * t_min)) / (ALPHA - lam)
    )


class TestKineticParams:
    def test_valid_ranges(self):
        KineticParams(0.0, 0.0, 0.0, 0.0)
        KineticParams(0.0, 0.0, 0.0, 1.0)  # pure blood

    def test_invalid(self):
        with pytest.raises(ValidationError):
            KineticParams(-0.1, 0.1, 0.1, 0.0)
        with pytest.raises(ValidationError):
            KineticParams(0.1, 0.1, 0.1, 1.5)
        with pytest.raises(ValidationError):
            KineticParams(0.5, 0.0, 0.0, 0.0)  # uptake with no clearance


class TestImpulseResponse:
    def test_h0_equals_K1(self):
        assert impulse_response(P_REF, 0.0) == pytest.approx(0.5, abs=1e-15)

    def test_zero_K1(self):
        p = KineticParams(0.0, 0.3, 0.1, 0.0)
        t = np.linspace(0, 600, 11)
        assert np.all(np.asarray(impulse_response(p, t)) == 0)

    def test_scalar_value_at_60s(self):
        expected = 1.25 * (0.1 + 0.3 * math.exp(-0.4))  # t = 1 min
        assert impulse_response(P_REF, 60.0) == pytest.approx(expected, rel=1e-12)

    def test_asymptote(self):
        assert impulse_response(P_REF, 1e7) == pytest.approx(0.5 * 0.1 / 0.4, rel=1e-6)

    @given(
        st.floats(0.01, 2.0), st.floats(0.01, 2.0), st.floats(0.0, 1.0),
        st.floats(0.0, 2.0),
    )
    def test_monotone_non_increasing(self, K1, k2, k3, vb_unused):
        p = KineticParams(K1, k2, k3, 0.0)
        t = np.linspace(0, 2730, 200)
        h = np.asarray(impulse_response(p, t))
        assert np.all(np.diff(h) <= 1e-12)

    def test_negative_time_rejected(self):
        with pytest.raises(ValidationError):
            impulse_response(P_REF, -1.0)


class TestTissueResponse:
    def test_zero_K1_gives_zero_curve(self):
        grid = FineGrid(dt=0.5, n=121)
        p = KineticParams(0.0, 0.3, 0.1, 0.0)
        ct = tissue_response(p, step_curve(grid), grid)
        assert np.all(ct.values == 0)

    def test_step_oracle_at_1min(self):
        grid = FineGrid(dt=0.5, n=241)
        ct = tissue_response(P_REF, step_curve(grid), grid)
        j = int(60 / 0.5)
        assert ct.values[j] == pytest.approx(0.434075, abs=1e-4)

    def test_exp_oracle_at_1min(self):
        grid = FineGrid(dt=0.5, n=241)
        t_min = grid.times() / 60.0
        ca = SampledCurve(times=grid.times(), values=np.exp(-t_min))
        ct = tissue_response(P_REF, ca, grid)
        j = int(60 / 0.5)
        assert ct.values[j] == pytest.approx(0.268040, abs=1e-4)

    def test_starts_at_zero_and_nonnegative(self):
        grid = FineGrid(dt=0.5, n=1001)
        ct = tissue_response(P_REF, step_curve(grid), grid)
        assert ct.values[0] == 0.0
        assert np.all(ct.values >= 0)

    def test_refinement_is_second_order(self):
        # halving dt should shrink the max error against the exponential
        # oracle by ~4x (trapezoid quadrature)
        end = 45 * 60.0
        errs = []
        for dt in (1.2, 0.6):
            n = int(round(end / dt)) + 1
            grid = FineGrid(dt=dt, n=n)
            t_min = grid.times() / 60.0
            ca = SampledCurve(times=grid.times(), values=np.exp(-t_min))
            ct = tissue_response(P_REF, ca, grid)
            errs.append(np.max(np.abs(ct.values - ct_exp_oracle(t_min))))
        ratio = errs[0] / errs[1]
        assert 3.5 <= ratio <= 4.5

    def test_degenerate_kernel_raises(self):
        grid = FineGrid(dt=0.5, n=121)
        with pytest.raises((NumericError, ValidationError)):
            p = KineticParams(0.5, 0.0, 0.0, 0.0)  # constructor itself rejects
            tissue_response(p, step_curve(grid), grid)


class TestForwardModel:
    def setup_method(self):
        self.s = make_schedule([(1, 30), (24, 5), (9, 20), (8, 300)])
        self.aif = FengAif()

    def test_pure_blood_equals_frame_averaged_aif(self):
        p = KineticParams(0.7, 0.3, 0.1, 1.0)  # (1 - Vb) kills the tissue term
        frames = forward_model(p, self.aif, self.s)
        from petkin.kinetics import ForwardContext

        ctx = ForwardContext(self.aif, self.s)
        expected = ctx.frames_of(ctx.ca_fine)
        assert frames == pytest.approx(expected, rel=1e-12)

    def test_k1_zero_scales_linearly_with_vb(self):
        p1 = KineticParams(0.0, 0.0, 0.0, 1.0)
        p05 = KineticParams(0.0, 0.0, 0.0, 0.05)
        f1 = forward_model(p1, self.aif, self.s)
        f05 = forward_model(p05, self.aif, self.s)
        assert f05 == pytest.approx(0.05 * f1, rel=1e-12)

    def test_single_frame_average_matches_integrated_oracle(self):
        s = make_schedule([(1, 60)])
        ca = SampledCurve(times=np.array([0.0, 60.0]), values=np.array([1.0, 1.0]))
        got = forward_model(P_REF, ca, s, mode="frame-average")[0]
        # (1/T) Int_0^T ct_step = (K1/a)(k3 T/2 + (k2/a)(1 - (1-e^{-aT})/(aT)))
        expected = 1.25 * (0.1 * 0.5 + 0.75 * (1 - (1 - math.exp(-0.4)) / 0.4))
        assert got == pytest.approx(expected, abs=1e-5)

    def test_linear_in_ca(self):
        p = KineticParams(0.5, 0.3, 0.1, 0.1)
        t = np.linspace(0, 2730, 2731)
        base = np.asarray(__import__("petkin").feng_eval(self.aif, t))
        c1 = SampledCurve(times=t, values=base)
        c2 = SampledCurve(times=t, values=2 * base)
        f1 = forward_model(p, c1, self.s)
        f2 = forward_model(p, c2, self.s)
        assert f2 == pytest.approx(2 * f1, rel=1e-12)

    def test_frame_average_close_to_midpoint_for_short_frames(self):
        # 1 s frames over the slow tail: both discretizations nearly agree
        s = make_schedule([(600, 1)])
        p = KineticParams(0.5, 0.3, 0.1, 0.05)
        fa = forward_model(p, self.aif, s, mode="frame-average", dt=0.25)
        mp = forward_model(p, self.aif, s, mode="midpoint", dt=0.25)
        tail = slice(400, 600)  # away from the bolus
        rel = np.abs(fa[tail] - mp[tail]) / np.abs(mp[tail])
        assert np.max(rel) < 1e-3

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValidationError):
            forward_model(P_REF, self.aif, self.s, mode="nearest")


class TestForwardVolume:
    def setup_method(self):
        self.s = make_schedule([(1, 30), (4, 5), (2, 20)])
        self.aif = FengAif()

    def _maps(self, data, mask):
        return ParametricMaps(data=data, mask=mask)

    def test_all_zero_maps(self):
        data = np.zeros((4, 2, 2, 2))
        img = forward_volume(self._maps(data, np.ones((2, 2, 2), bool)), self.aif, self.s)
        assert np.all(img.values == 0)

    def test_uniform_maps_match_single_voxel(self):
        data = np.zeros((4, 2, 2, 2))
        p = KineticParams(0.5, 0.3, 0.1, 0.05)
        for c, v in enumerate(p.as_array()):
            data[c] = v
        img = forward_volume(self._maps(data, np.ones((2, 2, 2), bool)), self.aif, self.s)
        single = forward_model(p, self.aif, self.s)
        for z in range(2):
            for y in range(2):
                for x in range(2):
                    assert np.array_equal(img.values[:, z, y, x], single)

    def test_two_distinct_voxels_match_single_calls(self):
        data = np.zeros((4, 1, 1, 2))
        pa = KineticParams(0.5, 0.3, 0.1, 0.05)
        pb = KineticParams(0.8, 1.2, 0.02, 0.25)
        data[:, 0, 0, 0] = pa.as_array()
        data[:, 0, 0, 1] = pb.as_array()
        img = forward_volume(self._maps(data, np.ones((1, 1, 2), bool)), self.aif, self.s)
        assert np.array_equal(img.values[:, 0, 0, 0], forward_model(pa, self.aif, self.s))
        assert np.array_equal(img.values[:, 0, 0, 1], forward_model(pb, self.aif, self.s))

    def test_unmasked_voxels_stay_zero(self):
        data = np.zeros((4, 1, 1, 2))
        data[:, 0, 0, 0] = [0.5, 0.3, 0.1, 0.05]
        data[:, 0, 0, 1] = [0.5, 0.3, 0.1, 0.05]
        mask = np.array([[[True, False]]])
        img = forward_volume(self._maps(data, mask), self.aif, self.s)
        assert np.all(img.values[:, 0, 0, 1] == 0)
        assert np.any(img.values[:, 0, 0, 0] != 0)

    def test_invalid_voxel_named_in_error(self):
        data = np.zeros((4, 1, 1, 2))
        data[:, 0, 0, 1] = [0.5, 0.0, 0.0, 0.0]  # K1 > 0, no clearance
        mask = np.ones((1, 1, 2), bool)
        with pytest.raises(ValidationError, match=r"\(0, 0, 1\)"):
            ParametricMaps(data=data, mask=mask)


class TestKi:
    def test_values(self):
        assert ki(KineticParams(0.5, 0.3, 0.0, 0.0)) == 0.0
        assert ki(KineticParams(0.5, 0.0, 0.1, 0.0)) == pytest.approx(0.5)
        assert ki(KineticParams(0.5, 0.3, 0.1, 0.0)) == pytest.approx(0.125)
        assert ki(KineticParams(0.0, 0.0, 0.0, 0.5)) == 0.0


class TestDynamicImage:
    def test_frame_count_must_match(self):
        s = make_schedule([(2, 10)])
        with pytest.raises(ValidationError):
            DynamicImage(schedule=s, values=np.zeros((3, 1, 1, 1)))
        with pytest.raises(ValidationError):
            DynamicImage(schedule=s, values=np.full((2, 1, 1, 1), np.nan))
