import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from petkin import (
    CurveDiagnostics,
    FengAif,
    SampledCurve,
    ValidationError,
    cumulative_integral,
    feng_curve,
    feng_eval,
    interp,
)
from petkin.aif import feng_from_json, feng_to_json, read_aif_csv, write_aif_csv


def _feng_scalar(p: FengAif, t: float) -> float:
    """Independent scalar evaluation of the bolus formula."""
    if t <= p.tau_s:
        return 0.0
    u = (t - p.tau_s) / 60.0
    return (
        (p.a1 * u - p.a2 - p.a3) * math.exp(p.l1 * u)
        + p.a2 * math.exp(p.l2 * u)
        + p.a3 * math.exp(p.l3 * u)
    )


def test_feng_zero_at_and_before_onset():
    p = FengAif()
    assert feng_eval(p, p.tau_s) == 0.0
    assert feng_eval(p, p.tau_s - 10) == 0.0
    assert feng_eval(p, 0.0) == 0.0


def test_feng_at_90s_matches_independent_evaluation():
    p = FengAif()
    expected = _feng_scalar(p, 90.0)  # u = 1 min
    assert expected == pytest.approx(51.81763059114053, rel=1e-12)
    assert feng_eval(p, 90.0) == pytest.approx(expected, rel=1e-12)


def test_feng_parameter_validation():
    with pytest.raises(ValidationError):
        FengAif(l1=-0.1, l2=-4.0)  # ordering violated
    with pytest.raises(ValidationError):
        FengAif(l3=0.01)  # must decay
    with pytest.raises(ValidationError):
        FengAif(a1=0.0)
    with pytest.raises(ValidationError):
        FengAif(tau_s=-1.0)


@given(
    st.floats(1.0, 2000.0), st.floats(0.0, 500.0), st.floats(0.0, 500.0),
    st.floats(0.5, 10.0), st.floats(0.05, 0.4), st.floats(0.001, 0.04),
)
def test_feng_output_never_negative(a1, a2, a3, g1, g2, l3mag):
    # valid ordering guarantees each grouped term is non-negative; the clamp
    # only has to absorb float rounding, and the tally stays consistent
    p = FengAif(tau_s=10.0, a1=a1, a2=a2, a3=a3,
                l1=-l3mag - g2 - g1, l2=-l3mag - g2, l3=-l3mag)
    diag = CurveDiagnostics()
    vals = feng_eval(p, np.linspace(0, 2730, 500), diag)
    assert np.all(vals >= 0)
    assert diag.clamped_negative >= 0


def test_default_curve_is_unimodal():
    p = FengAif()
    t = np.linspace(0.0, 2730.0, 20001)
    v = feng_eval(p, t)
    s = np.sign(np.diff(v))
    s = s[s != 0]  # drop the flat pre-onset stretch
    assert np.count_nonzero(np.diff(s) != 0) == 1  # one rise-to-decay turn
    assert s[0] > 0 and s[-1] < 0


def test_interp_node_exactness_and_edges():
    c = SampledCurve(times=np.array([0.0, 10.0]), values=np.array([0.0, 1.0]))
    assert interp(c, 0.0) == 0.0
    assert interp(c, 10.0) == 1.0
    assert interp(c, 5.0) == pytest.approx(0.5)
    assert interp(c, -3.0) == 0.0
    diag = CurveDiagnostics()
    assert interp(c, 25.0, diag) == 1.0  # hold-last
    assert diag.extrapolated_hold_last == 1


def test_feng_sampling_then_interp_reproduces_nodes():
    p = FengAif()
    t = np.linspace(0.0, 300.0, 601)
    c = feng_curve(p, t)
    assert np.array_equal(interp(c, t), c.values)


def test_cumulative_integral_cases():
    const = SampledCurve(times=np.array([0.0, 5.0, 10.0]), values=np.ones(3))
    ci = cumulative_integral(const)
    assert ci.values.tolist() == [0.0, 5.0, 10.0]
    zeros = SampledCurve(times=np.array([0.0, 1.0]), values=np.zeros(2))
    assert cumulative_integral(zeros).values.tolist() == [0.0, 0.0]
    tri = SampledCurve(times=np.array([0.0, 1.0, 2.0]), values=np.array([0.0, 1.0, 0.0]))
    assert cumulative_integral(tri).values.tolist() == [0.0, 0.5, 1.0]


@given(
    st.lists(st.floats(0.0, 100.0), min_size=2, max_size=30),
)
def test_cumulative_integral_monotone_for_nonnegative(values):
    t = np.arange(len(values), dtype=float)
    ci = cumulative_integral(SampledCurve(times=t, values=np.array(values)))
    assert np.all(np.diff(ci.values) >= -1e-12)


def test_curve_validation():
    with pytest.raises(ValidationError):
        SampledCurve(times=np.array([0.0, 0.0]), values=np.array([1.0, 1.0]))
    with pytest.raises(ValidationError):
        SampledCurve(times=np.array([0.0]), values=np.array([1.0]))
    with pytest.raises(ValidationError):
        SampledCurve(times=np.array([0.0, 1.0]), values=np.array([1.0, -1.0]))


def test_aif_csv_round_trip(tmp_path):
    p = FengAif()
    c = feng_curve(p, np.linspace(0, 100, 7))
    path = tmp_path / "aif.csv"
    write_aif_csv(path, c)
    text = path.read_text()
    assert text.startswith("time_s,value_kbq_ml\n")
    assert "\r" not in text
    back = read_aif_csv(path)
    assert np.array_equal(back.times, c.times)
    assert np.array_equal(back.values, c.values)


def test_feng_json_round_trip():
    p = FengAif(tau_s=12.0, a1=500.0)
    obj = feng_to_json(p)
    assert set(obj) == {"tau_s", "a1", "a2", "a3", "l1", "l2", "l3"}
    assert feng_from_json(obj) == p
    with pytest.raises(ValidationError):
        feng_from_json({"tau_s": 1.0})
