from __future__ import annotations

import numpy as np
import pytest
from pydantic import ValidationError

from phishoot.nonlinearity import FSpec, f_eval, f_primitive, validate_f


def test_power_family_is_odd() -> None:
    spec = FSpec.power(1.0 / 3.0)
    t = np.array([-8.0, -1.0, 0.0, 1.0, 8.0])

    np.testing.assert_allclose(f_eval(spec, t), [-2.0, -1.0, 0.0, 1.0, 2.0])
    assert f_primitive(spec, 1.0) == pytest.approx(0.75)
    assert f_primitive(spec, -1.0) == pytest.approx(0.75)


def test_power_family_requires_positive_delta() -> None:
    with pytest.raises(ValidationError):
        FSpec(family="power", delta=0.0, dInfinity=1.0)
    with pytest.raises(ValidationError):
        FSpec.power(0.5, d_infinity=-1.0)


def test_custom_primitive_matches_closed_form() -> None:
    closed = FSpec.arctan()
    custom = FSpec.custom(np.arctan, d_infinity=1.0, label="atan")
    t = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])

    np.testing.assert_allclose(f_primitive(custom, t), f_primitive(closed, t), rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize(
    ("delta", "gamma1"),
    [
        (0.2, 2.0),
        (0.5, 2.0),
        (0.9, 2.0),
        (1.0, 2.0),
        (1.2, 2.0),
        (1.5, 2.0),
        (0.5, 3.0),
        (1.5, 3.0),
        (2.0, 3.0),
        (3.0, 3.0),
    ],
)
def test_integrability_matches_analytic_rule(delta: float, gamma1: float) -> None:
    report = validate_f(FSpec.power(delta), gamma1)

    expected = "pass" if delta < gamma1 - 1.0 else "fail"
    assert report.check("f3-integrability").verdict == expected


def test_arctan_depends_on_gamma1() -> None:
    spec = FSpec.arctan()

    assert validate_f(spec, 2.0).check("f3-integrability").verdict == "fail"
    assert validate_f(spec, 3.0).verdict == "pass"


def test_even_function_fails_sign_condition() -> None:
    spec = FSpec.custom(lambda t: t * t, d_infinity=1.0, label="t^2")

    report = validate_f(spec, 3.0)

    sign = report.check("f1-sign")
    assert sign.verdict == "fail"
    assert sign.firstViolationAt < 0.0
    assert report.verdict == "fail"


def test_decreasing_function_fails_monotonicity() -> None:
    spec = FSpec.custom(lambda t: np.sign(t) * np.abs(t) ** 0.5 * np.exp(-4.0 * t * t), d_infinity=2.0)

    report = validate_f(spec, 3.0)

    assert report.check("f2-nondecreasing").verdict == "fail"
    assert report.check("f1-sign").verdict == "pass"


def test_integrability_just_below_boundary_is_inconclusive() -> None:
    # delta / (gamma1 - 1) = 0.9995 converges, but dyadic increments shrink by only 2^-0.0005
    report = validate_f(FSpec.power(0.9995), 2.0)

    check = report.check("f3-integrability")
    assert check.verdict == "inconclusive"
    assert "too slowly" in check.detail
    assert report.verdict == "inconclusive"


@pytest.mark.parametrize(
    "spec",
    [
        FSpec.power(1.0 / 3.0),
        FSpec.power(2.0),
        FSpec.arctan(),
        FSpec.custom(lambda t: t + t**3, d_infinity=1.0, label="t+t^3"),
    ],
    ids=lambda spec: spec.describe(),
)
def test_primitive_derivative_is_f(spec: FSpec) -> None:
    t = np.array([-2.0, -1.3, -0.7, -0.2, 0.0, 0.2, 0.7, 1.3, 2.0])
    step = 1e-5

    slope = (np.asarray(f_primitive(spec, t + step)) - np.asarray(f_primitive(spec, t - step))) / (2.0 * step)

    np.testing.assert_allclose(slope, f_eval(spec, t), rtol=0.0, atol=1e-6)
