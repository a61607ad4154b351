from __future__ import annotations

import logging
import math
import warnings
from typing import Any, Callable, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import integrate

from .report_contract import CheckReportV1, ConditionCheckV1, Verdict, summarize_margins

logger = logging.getLogger(__name__)

FFamily = Literal["power", "arctan", "custom"]
ArrayLike = float | np.ndarray

CAUCHY_TOL = 1e-6
DIVERGENCE_CEILING = 1e6
HALVINGS = 40
STALL_RATIO = 1.0 - 1e-3
FLAT_RATIO_TOL = 1e-8


class FSpec(BaseModel):
    """Reaction term ``f`` with the ceiling ``dInfinity`` of its monotone region."""

    model_config = ConfigDict(extra="forbid", frozen=True, arbitrary_types_allowed=True)

    family: FFamily
    dInfinity: float
    delta: float | None = None
    f: Callable[[np.ndarray], np.ndarray] | None = None
    label: str | None = None

    @model_validator(mode="before")
    @classmethod
    def _check_family(cls, values: Any) -> Any:
        if not isinstance(values, dict):
            return values
        family = values.get("family")
        if family == "power":
            delta = values.get("delta")
            if delta is None or not float(delta) > 0.0:
                raise ValueError("power family requires delta > 0.")
        if family == "custom" and values.get("f") is None:
            raise ValueError("custom family requires an f evaluator.")
        return values

    @model_validator(mode="after")
    def _check_ceiling(self) -> "FSpec":
        if not (math.isfinite(self.dInfinity) and self.dInfinity > 0.0):
            raise ValueError("dInfinity must be a positive finite number.")
        return self

    @classmethod
    def power(cls, delta: float, *, d_infinity: float = 1.0) -> "FSpec":
        return cls(family="power", delta=delta, dInfinity=d_infinity)

    @classmethod
    def arctan(cls, *, d_infinity: float = 1.0) -> "FSpec":
        return cls(family="arctan", dInfinity=d_infinity)

    @classmethod
    def custom(
        cls,
        f: Callable[[np.ndarray], np.ndarray],
        *,
        d_infinity: float,
        label: str | None = None,
    ) -> "FSpec":
        return cls(family="custom", f=f, dInfinity=d_infinity, label=label)

    def describe(self) -> str:
        if self.family == "power":
            return f"power(delta={self.delta:g})"
        if self.family == "arctan":
            return "arctan"
        return f"custom({self.label or 'f'})"


def f_eval(spec: FSpec, t: ArrayLike) -> ArrayLike:
    arr = np.asarray(t, dtype=float)
    if spec.family == "power":
        value = np.sign(arr) * np.abs(arr) ** spec.delta
    elif spec.family == "arctan":
        value = np.arctan(arr)
    else:
        value = np.asarray(spec.f(arr), dtype=float) * np.ones_like(arr)
    return float(value) if arr.ndim == 0 else value


def f_primitive(spec: FSpec, t: ArrayLike) -> ArrayLike:
    """``F(t) = int_0^t f(s) ds``."""
    arr = np.asarray(t, dtype=float)
    if spec.family == "power":
        value = np.abs(arr) ** (spec.delta + 1.0) / (spec.delta + 1.0)
    elif spec.family == "arctan":
        value = arr * np.arctan(arr) - 0.5 * np.log1p(arr * arr)
    else:
        flat = arr.reshape(-1)
        value = np.array(
            [
                integrate.quad(lambda s: float(f_eval(spec, s)), 0.0, x, epsabs=1e-12, epsrel=1e-12)[0]
                for x in flat
            ],
            dtype=float,
        ).reshape(arr.shape)
    return float(value) if arr.ndim == 0 else value


def _side_integrability(spec: FSpec, exponent: float, probe: float, sign: float) -> tuple[Verdict, str]:
    """Classify ``int_0^probe [sign f(sign t)]^(-exponent) dt`` by shrinking the lower limit."""

    def integrand(t: float) -> float:
        value = sign * float(f_eval(spec, sign * t))
        if not value > 0.0:
            return math.inf
        return value ** (-exponent)

    limits = probe * 2.0 ** -np.arange(HALVINGS + 1)
    increments = np.empty(HALVINGS)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for k in range(HALVINGS):
            increments[k] = integrate.quad(
                integrand, limits[k + 1], limits[k], epsabs=1e-14, epsrel=1e-10, limit=200
            )[0]
    if not np.all(np.isfinite(increments)):
        return "fail", "integrand not finite; f vanishes or changes sign inside the probe interval"

    partial = np.cumsum(increments)
    if partial[-1] > DIVERGENCE_CEILING and np.all(np.diff(partial) >= 0.0):
        return "fail", f"partial integrals grow past {DIVERGENCE_CEILING:g}"
    if abs(partial[-1] - partial[-2]) <= CAUCHY_TOL and abs(partial[-2] - partial[-3]) <= CAUCHY_TOL:
        return "pass", f"partial integrals settle at {partial[-1]:.10g}"

    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = increments[1:] / increments[:-1]
    if np.all(ratios[-5:] >= 1.0 - FLAT_RATIO_TOL):
        return "fail", f"increments do not shrink (ratio {ratios[-1]:.6g}); partial integrals are unbounded"
    if np.all(ratios[-5:] >= STALL_RATIO):
        return "inconclusive", f"increments shrink too slowly to decide (ratio {ratios[-1]:.6g})"

    denominators = increments[1:] - increments[:-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        accelerated = partial[1:] - increments[1:] ** 2 / denominators
    tail = accelerated[-3:]
    if np.all(np.isfinite(tail)) and np.max(np.abs(np.diff(tail))) <= CAUCHY_TOL:
        return "pass", f"accelerated partial integrals settle at {tail[-1]:.10g}"
    return "inconclusive", f"no Cauchy convergence after {HALVINGS} halvings (last {partial[-1]:.6g})"


def validate_f(
    spec: FSpec,
    gamma1: float,
    probe: float = 1.0,
    *,
    samples: int = 2001,
) -> CheckReportV1:
    """Check the sign condition, monotonicity below ``dInfinity`` and integrability near 0.

    Integrability is tested in the two-sided form
    ``max(int_{-x}^0 [-f]^(-1/(gamma1-1)), int_0^y [f]^(-1/(gamma1-1))) < inf``.
    """
    if not gamma1 > 1.0:
        raise ValueError("gamma1 must be > 1.")
    checks: list[ConditionCheckV1] = []

    positive = np.geomspace(probe * 1e-9, probe, samples // 2)
    t = np.concatenate([-positive[::-1], positive])
    values = np.asarray(f_eval(spec, t), dtype=float)
    product = t * values
    signed = np.where(product > 0.0, product, -np.abs(product) - np.finfo(float).tiny)
    checks.append(summarize_margins("f1-sign", signed, t, detail="t f(t) > 0 for t != 0"))

    grid = np.linspace(-probe, spec.dInfinity, samples)
    monotone = np.diff(np.asarray(f_eval(spec, grid), dtype=float))
    scale = 1e-12 * (1.0 + np.abs(np.asarray(f_eval(spec, grid[1:]))))
    checks.append(
        summarize_margins(
            "f2-nondecreasing",
            monotone + scale,
            grid[1:],
            detail=f"f nondecreasing on [-{probe:g}, {spec.dInfinity:g}]",
        )
    )

    exponent = 1.0 / (gamma1 - 1.0)
    sides = {
        "right": _side_integrability(spec, exponent, probe, 1.0),
        "left": _side_integrability(spec, exponent, probe, -1.0),
    }
    verdicts = [verdict for verdict, _ in sides.values()]
    if "fail" in verdicts:
        verdict: Verdict = "fail"
    elif "inconclusive" in verdicts:
        verdict = "inconclusive"
        logger.warning("integrability of f^(-1/(gamma1-1)) inconclusive for %s", spec.describe())
    else:
        verdict = "pass"
    checks.append(
        ConditionCheckV1(
            name="f3-integrability",
            verdict=verdict,
            samples=2 * HALVINGS,
            detail="; ".join(f"{side}: {message}" for side, (_, message) in sides.items()),
        )
    )

    away = positive[positive > probe * 1e-3]
    step = away * 1e-6
    with np.errstate(all="ignore"):
        slopes = np.concatenate(
            [
                (np.asarray(f_eval(spec, away + step)) - np.asarray(f_eval(spec, away - step))) / (2 * step),
                (np.asarray(f_eval(spec, -away + step)) - np.asarray(f_eval(spec, -away - step))) / (2 * step),
            ]
        )
    smooth = bool(np.all(np.isfinite(slopes)))
    checks.append(
        ConditionCheckV1(
            name="f-c1-away-from-zero",
            verdict="pass" if smooth else "warn",
            samples=int(slopes.size),
            detail="central differences of f finite away from 0",
        )
    )
    return CheckReportV1(subject=f"f {spec.describe()} (gamma1={gamma1:g})", checks=checks)
