import math

import hypothesis
import hypothesis.strategies as st
import pytest

from bellthresh.detectors import (
    PerfectStep,
    SCurve,
    SmoothStep,
    evaluate,
    is_perfect_step,
    parse_response,
)


def test_perfect_step_threshold_semantics():
    f = PerfectStep(5)
    assert evaluate(f, 4) == 0.0
    assert evaluate(f, 5) == 1.0
    assert evaluate(f, 50) == 1.0


def test_smooth_step_values():
    f = SmoothStep(3, 0.2)
    assert evaluate(f, 2) == 0.0
    assert evaluate(f, 3) == pytest.approx(0.2)
    assert evaluate(f, 4) == 1.0


def test_scurve_logistic_calibration_point():
    # steepness k with midpoint placed so the curve passes through 20% at 60 photons
    k = 0.1
    midpoint = 60 + math.log(4.0) / k
    f = SCurve.from_logistic(threshold=30, midpoint=midpoint, steepness=k)
    assert evaluate(f, 60) == pytest.approx(0.2, abs=1e-12)
    assert evaluate(f, 29) == 0.0


@hypothesis.given(
    n=st.integers(min_value=1, max_value=12),
    eta=st.floats(min_value=1e-6, max_value=1.0, exclude_min=True),
)
def test_monotone_and_zero_below_threshold(n, eta):
    for f in (PerfectStep(n), SmoothStep(n, eta)):
        values = [evaluate(f, x) for x in range(2 * n + 11)]
        assert all(0.0 <= v <= 1.0 for v in values)
        assert all(b >= a for a, b in zip(values, values[1:]))
        assert values[n - 1] == 0.0
        assert values[n] > 0.0


def test_scurve_monotone_validation():
    with pytest.raises(ValueError):
        SCurve(2, ((2, 0.5), (3, 0.4)))
    with pytest.raises(ValueError):
        SCurve(2, ((1, 0.5),))  # positive probability below threshold
    with pytest.raises(ValueError):
        SCurve(2, ((2, 0.0), (3, 0.4)))  # zero at first point contradicts threshold


def test_is_perfect_step():
    assert is_perfect_step(PerfectStep(2))
    assert not is_perfect_step(SmoothStep(2, 0.5))
    assert is_perfect_step(SmoothStep(2, 1.0))
    assert is_perfect_step(SCurve(2, ((2, 1.0), (3, 1.0))))
    assert not is_perfect_step(SCurve(2, ((2, 0.3), (3, 1.0))))


def test_parse_response():
    assert parse_response("step:4") == PerfectStep(4)
    assert parse_response("smooth:3:0.25") == SmoothStep(3, 0.25)
    with pytest.raises(ValueError):
        parse_response("step:zero")
    with pytest.raises(ValueError):
        parse_response("gauss:3")
    with pytest.raises(ValueError):
        parse_response("smooth:3:1.5")


def test_parse_scurve_csv(tmp_path):
    path = tmp_path / "eye.csv"
    path.write_text("x,theta\n30,0.05\n45,0.1\n60,0.2\n90,0.9\n")
    f = parse_response(f"scurve:{path}")
    assert isinstance(f, SCurve)
    assert f.threshold == 30
    assert evaluate(f, 60) == pytest.approx(0.2)
    assert evaluate(f, 29) == 0.0
    assert evaluate(f, 75) == pytest.approx(0.2)  # clamps to last table point below 90
    assert evaluate(f, 500) == pytest.approx(0.9)


def test_parse_scurve_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("photons,p\n30,0.05\n")
    with pytest.raises(ValueError):
        parse_response(f"scurve:{path}")


def test_saturation_points():
    assert PerfectStep(4).saturation_point == 4
    assert SmoothStep(4, 0.3).saturation_point == 5
    assert SCurve(2, ((2, 0.3), (7, 0.8))).saturation_point == 7
    assert SCurve(2, ((2, 0.3), (7, 0.8))).saturation_value == pytest.approx(0.8)


def test_threshold_must_be_positive():
    with pytest.raises(ValueError):
        PerfectStep(0)
    with pytest.raises(ValueError):
        SmoothStep(-1, 0.5)
