"""Growth model phi and its derived functions.

For a growth model ``phi`` the module evaluates

* ``h(t) = t phi(t)``, the flux map, and its inverse,
* ``Phi(t) = int_0^t s phi(s) ds``, the N-function (``phi_primitive``),
* ``H(t) = t Phi'(t) - Phi(t)``, the kinetic energy density (``energy_density``).

All evaluators accept scalars or numpy arrays and return the same shape.
"""

from __future__ import annotations

import logging
import math
from typing import Any, Callable, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import integrate

from .errors import DomainError, NumericError
from .report_contract import CheckReportV1, ConditionCheckV1, summarize_margins

logger = logging.getLogger(__name__)

PhiFamily = Literal["power", "sum_of_powers", "custom"]
ArrayLike = float | np.ndarray

H_INVERSE_RTOL = 1e-12
H_INVERSE_MAX_ITER = 200
DERIVATIVE_STEP = 1e-6
QUAD_TOL = 1e-12
SECOND_DIFFERENCE_STEP = 1e-4
SECOND_DIFFERENCE_RTOL = 1e-3


class PhiSpec(BaseModel):
    """Immutable description of ``phi``.

    ``gamma1``/``gamma2`` are the exponents of the growth condition
    ``gamma1 - 1 <= (t phi)'/phi <= gamma2 - 1``; ``Gamma1 = min(1, gamma1 - 1)``.
    """

    model_config = ConfigDict(extra="forbid", frozen=True, arbitrary_types_allowed=True)

    family: PhiFamily
    p: float | None = None
    q: float | None = None
    phi: Callable[[np.ndarray], np.ndarray] | None = None
    phiPrime: Callable[[np.ndarray], np.ndarray] | None = None
    label: str | None = None
    gamma1: float
    gamma2: float
    Gamma1: float
    hAt1: float

    @model_validator(mode="before")
    @classmethod
    def _derive_constants(cls, values: Any) -> Any:
        if not isinstance(values, dict):
            return values
        data = dict(values)
        family = data.get("family")
        if family == "power":
            p = float(data["p"])
            if not p > 1.0:
                raise ValueError("power family requires p > 1.")
            data.setdefault("gamma1", p)
            data.setdefault("gamma2", p)
            data.setdefault("hAt1", 1.0)
        elif family == "sum_of_powers":
            p, q = float(data["p"]), float(data["q"])
            if not 1.0 < p <= q:
                raise ValueError("sum_of_powers family requires 1 < p <= q.")
            data.setdefault("gamma1", p)
            data.setdefault("gamma2", q)
            data.setdefault("hAt1", 2.0)
        elif family == "custom":
            if data.get("phi") is None:
                raise ValueError("custom family requires a phi evaluator.")
            if "gamma1" not in data or "gamma2" not in data:
                raise ValueError("custom family requires declared gamma1 and gamma2.")
            if "hAt1" not in data:
                data["hAt1"] = float(np.asarray(data["phi"](np.asarray(1.0)), dtype=float))
        gamma1 = data.get("gamma1")
        if gamma1 is not None:
            data.setdefault("Gamma1", min(1.0, float(gamma1) - 1.0))
        return data

    @model_validator(mode="after")
    def _check_exponents(self) -> "PhiSpec":
        if not self.gamma1 > 1.0:
            raise ValueError("gamma1 must be > 1.")
        if self.gamma2 < self.gamma1:
            raise ValueError("gamma2 must be >= gamma1.")
        if not (math.isfinite(self.hAt1) and self.hAt1 > 0.0):
            raise ValueError("h(1) must be a positive finite number.")
        return self

    @classmethod
    def power(cls, p: float) -> "PhiSpec":
        return cls(family="power", p=p)

    @classmethod
    def sum_of_powers(cls, p: float, q: float) -> "PhiSpec":
        return cls(family="sum_of_powers", p=p, q=q)

    @classmethod
    def custom(
        cls,
        phi: Callable[[np.ndarray], np.ndarray],
        *,
        gamma1: float,
        gamma2: float,
        phi_prime: Callable[[np.ndarray], np.ndarray] | None = None,
        label: str | None = None,
    ) -> "PhiSpec":
        return cls(
            family="custom",
            phi=phi,
            phiPrime=phi_prime,
            gamma1=gamma1,
            gamma2=gamma2,
            label=label,
        )

    def describe(self) -> str:
        if self.family == "power":
            return f"power(p={self.p:g})"
        if self.family == "sum_of_powers":
            return f"sum_of_powers(p={self.p:g}, q={self.q:g})"
        return f"custom({self.label or 'phi'})"


def _as_array(t: ArrayLike) -> tuple[np.ndarray, bool]:
    arr = np.asarray(t, dtype=float)
    return arr, arr.ndim == 0


def _out(arr: np.ndarray, scalar: bool) -> ArrayLike:
    return float(arr) if scalar else arr


def _require_nonnegative(arr: np.ndarray, name: str) -> None:
    if np.any(arr < 0.0):
        raise DomainError(
            code="NEGATIVE_ARGUMENT",
            message=f"{name} requires a nonnegative argument; signs are handled by the caller.",
            details={"min": float(np.min(arr))},
        )


def phi_eval(spec: PhiSpec, t: ArrayLike) -> ArrayLike:
    arr, scalar = _as_array(t)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if spec.family == "power":
            value = arr ** (spec.p - 2.0)
        elif spec.family == "sum_of_powers":
            value = arr ** (spec.p - 2.0) + arr ** (spec.q - 2.0)
        else:
            value = np.asarray(spec.phi(arr), dtype=float) * np.ones_like(arr)
    return _out(value, scalar)


def phi_prime_eval(spec: PhiSpec, t: ArrayLike) -> ArrayLike:
    arr, scalar = _as_array(t)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if spec.family == "power":
            value = (spec.p - 2.0) * arr ** (spec.p - 3.0)
        elif spec.family == "sum_of_powers":
            value = (spec.p - 2.0) * arr ** (spec.p - 3.0) + (spec.q - 2.0) * arr ** (spec.q - 3.0)
        elif spec.phiPrime is not None:
            value = np.asarray(spec.phiPrime(arr), dtype=float) * np.ones_like(arr)
        else:
            step = arr * DERIVATIVE_STEP
            value = (
                np.asarray(spec.phi(arr + step), dtype=float)
                - np.asarray(spec.phi(arr - step), dtype=float)
            ) / (2.0 * step)
    return _out(value, scalar)


def h_eval(spec: PhiSpec, t: ArrayLike) -> ArrayLike:
    """``h(t) = t phi(t)`` with ``h(0) = 0``."""
    arr, scalar = _as_array(t)
    _require_nonnegative(arr, "h_eval")
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if spec.family == "power":
            value = arr ** (spec.p - 1.0)
        elif spec.family == "sum_of_powers":
            value = arr ** (spec.p - 1.0) + arr ** (spec.q - 1.0)
        else:
            safe = np.where(arr > 0.0, arr, 1.0)
            value = np.where(arr > 0.0, safe * np.asarray(phi_eval(spec, safe)), 0.0)
    return _out(np.asarray(value, dtype=float), scalar)


def h_prime_eval(spec: PhiSpec, t: ArrayLike) -> ArrayLike:
    arr, scalar = _as_array(t)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if spec.family == "power":
            value = (spec.p - 1.0) * arr ** (spec.p - 2.0)
        elif spec.family == "sum_of_powers":
            value = (spec.p - 1.0) * arr ** (spec.p - 2.0) + (spec.q - 1.0) * arr ** (spec.q - 2.0)
        else:
            value = np.asarray(phi_eval(spec, arr)) + arr * np.asarray(phi_prime_eval(spec, arr))
    return _out(np.asarray(value, dtype=float), scalar)


def h_inverse_bracket(spec: PhiSpec, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bracket for ``h^{-1}(s)`` from the power sandwich of ``h`` around ``t = 1``."""
    ratio = s / spec.hAt1
    a = ratio ** (1.0 / (spec.gamma1 - 1.0))
    b = ratio ** (1.0 / (spec.gamma2 - 1.0))
    return np.minimum(a, b), np.maximum(a, b)


def h_inverse(
    spec: PhiSpec,
    s: ArrayLike,
    *,
    rtol: float = H_INVERSE_RTOL,
    max_iter: int = H_INVERSE_MAX_ITER,
) -> ArrayLike:
    """Solve ``h(t) = s`` to ``|h(t) - s| <= rtol (1 + s)``.

    Power families are inverted in closed form. Everything else runs a safeguarded Newton
    iteration inside the sandwich bracket, falling back to bisection whenever the Newton
    step leaves the bracket.
    """
    arr, scalar = _as_array(s)
    _require_nonnegative(arr, "h_inverse")
    if spec.family == "power":
        return _out(arr ** (1.0 / (spec.p - 1.0)), scalar)

    flat = arr.reshape(-1)
    result = np.zeros_like(flat)
    active = flat > 0.0
    if not np.any(active):
        return _out(result.reshape(arr.shape), scalar)

    target = flat[active]
    lo, hi = h_inverse_bracket(spec, target)
    lo = lo * (1.0 - 1e-12)
    hi = hi * (1.0 + 1e-12)
    # A custom model whose declared exponents are too tight can miss the root; widen.
    for _ in range(64):
        h_lo = np.asarray(h_eval(spec, lo))
        h_hi = np.asarray(h_eval(spec, hi))
        low_bad = h_lo > target
        high_bad = h_hi < target
        if not (np.any(low_bad) or np.any(high_bad)):
            break
        lo = np.where(low_bad, lo * 0.5, lo)
        hi = np.where(high_bad, hi * 2.0, hi)
    else:
        raise NumericError(
            code="H_INVERSE_NOT_BRACKETED",
            message="Could not bracket h^{-1}(s); declared gamma1/gamma2 are inconsistent with phi.",
            details={"s": target.tolist()[:8]},
        )

    t = np.sqrt(lo * hi)
    tol = rtol * (1.0 + target)
    for iteration in range(max_iter):
        residual = np.asarray(h_eval(spec, t)) - target
        done = np.abs(residual) <= tol
        if np.all(done):
            result[active] = t
            logger.debug("h_inverse converged in %d iterations", iteration)
            return _out(result.reshape(arr.shape), scalar)
        lo = np.where(residual < 0.0, t, lo)
        hi = np.where(residual > 0.0, t, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = t - residual / np.asarray(h_prime_eval(spec, t))
        inside = np.isfinite(newton) & (newton > lo) & (newton < hi)
        t = np.where(done, t, np.where(inside, newton, 0.5 * (lo + hi)))

    raise NumericError(
        code="H_INVERSE_NO_CONVERGENCE",
        message=f"h^{{-1}} did not converge within {max_iter} iterations.",
        details={"bracket": [float(np.min(lo)), float(np.max(hi))]},
    )


def phi_primitive(spec: PhiSpec, t: ArrayLike) -> ArrayLike:
    """``Phi(t) = int_0^t s phi(s) ds``."""
    arr, scalar = _as_array(t)
    _require_nonnegative(arr, "phi_primitive")
    if spec.family == "power":
        value = arr**spec.p / spec.p
    elif spec.family == "sum_of_powers":
        value = arr**spec.p / spec.p + arr**spec.q / spec.q
    else:
        flat = arr.reshape(-1)
        value = np.array(
            [
                integrate.quad(lambda s: float(h_eval(spec, s)), 0.0, x, epsabs=QUAD_TOL, epsrel=QUAD_TOL)[0]
                if x > 0.0
                else 0.0
                for x in flat
            ],
            dtype=float,
        ).reshape(arr.shape)
    return _out(np.asarray(value, dtype=float), scalar)


def energy_density(spec: PhiSpec, t: ArrayLike) -> ArrayLike:
    """``H(t) = t Phi'(t) - Phi(t) = t^2 phi(t) - Phi(t)``; ``H(0) = 0``."""
    arr, scalar = _as_array(t)
    _require_nonnegative(arr, "energy_density")
    if spec.family == "power":
        value = (1.0 - 1.0 / spec.p) * arr**spec.p
    elif spec.family == "sum_of_powers":
        value = (1.0 - 1.0 / spec.p) * arr**spec.p + (1.0 - 1.0 / spec.q) * arr**spec.q
    else:
        value = arr * np.asarray(h_eval(spec, arr)) - np.asarray(phi_primitive(spec, arr))
    return _out(np.asarray(value, dtype=float), scalar)


def _safe_h(spec: PhiSpec, t: np.ndarray) -> np.ndarray:
    """``h`` on a grid, with evaluator failures turned into NaN entries."""
    try:
        with np.errstate(all="ignore"):
            return np.asarray(h_eval(spec, t), dtype=float)
    except Exception:  # noqa: BLE001 - user evaluators may raise anything
        values = np.empty_like(t)
        for index, x in enumerate(t):
            try:
                with np.errstate(all="ignore"):
                    values[index] = float(h_eval(spec, x))
            except Exception:  # noqa: BLE001
                values[index] = np.nan
        return values


def _safe_log_slope(spec: PhiSpec, t: np.ndarray, h: np.ndarray) -> np.ndarray:
    try:
        with np.errstate(all="ignore"):
            return t * np.asarray(h_prime_eval(spec, t), dtype=float) / h
    except Exception:  # noqa: BLE001
        with np.errstate(all="ignore"):
            return np.gradient(np.log(h), np.log(t))


def validate_phi(
    spec: PhiSpec,
    *,
    samples: int = 10_000,
    t_min: float = 1e-6,
    t_max: float = 1e6,
    strict: bool = False,
) -> CheckReportV1:
    """Sample the structural conditions on ``phi`` over a log-spaced grid.

    Checks: vanishing and blow-up of ``t phi(t)`` at the ends of the range, strict
    monotonicity of ``t phi(t)``, and the logarithmic growth bounds
    ``gamma1 - 1 <= d ln h / d ln t <= gamma2 - 1``. Evaluator failures are reported as
    per-point violations.
    """
    t = np.geomspace(t_min, t_max, samples)
    h = _safe_h(spec, t)
    finite = np.isfinite(h) & (h > 0.0)
    checks: list[ConditionCheckV1] = []

    checks.append(
        ConditionCheckV1(
            name="evaluator",
            verdict="pass" if np.all(finite) else "fail",
            samples=samples,
            violations=int(np.count_nonzero(~finite)),
            firstViolationAt=float(t[np.argmax(~finite)]) if not np.all(finite) else None,
            detail="t phi(t) must be finite and positive on (0, inf)",
        )
    )

    slope = _safe_log_slope(spec, t, h)
    slope = np.where(finite, slope, np.nan)
    usable = np.isfinite(slope)
    decade = max(2, samples // int(max(1.0, np.log10(t_max / t_min))))

    low = slope[:decade][usable[:decade]]
    low_slope = float(low.min()) if low.size else float("nan")
    checks.append(
        ConditionCheckV1(
            name="phi1-vanishing-at-zero",
            verdict="pass" if low.size and low_slope > 1e-3 and h[0] < h[decade - 1] else "fail",
            margin=low_slope if low.size else None,
            samples=int(low.size),
            detail=f"h(t_min)={h[0]:.6g}; log-slope over the lowest decade must stay positive",
        )
    )
    high = slope[-decade:][usable[-decade:]]
    high_slope = float(high.min()) if high.size else float("nan")
    checks.append(
        ConditionCheckV1(
            name="phi1-unbounded-at-infinity",
            verdict="pass" if high.size == decade and high_slope > 1e-3 else "fail",
            margin=high_slope if high.size else None,
            samples=int(high.size),
            detail=f"h(t_max)={h[-1]:.6g}; log-slope over the highest decade must stay positive",
        )
    )

    with np.errstate(all="ignore"):
        increments = np.diff(h) / np.maximum(np.abs(h[:-1]), np.finfo(float).tiny)
    checks.append(
        summarize_margins(
            "phi2-strictly-increasing",
            np.where(np.isfinite(increments), increments, np.nan),
            t[1:],
            detail="t phi(t) strictly increasing on the grid",
        )
    )

    slack = 1e-9 if spec.family != "custom" or spec.phiPrime is not None else 1e-6
    with np.errstate(all="ignore"):
        growth = np.minimum(slope - (spec.gamma1 - 1.0), (spec.gamma2 - 1.0) - slope) + slack
    growth_check = summarize_margins(
        "phi3-growth-bounds",
        growth,
        t,
        detail=f"{spec.gamma1:g} - 1 <= (t phi)'/phi <= {spec.gamma2:g} - 1",
    )
    checks.append(growth_check)
    if not growth_check.passed:
        logger.warning("phi3 growth bounds violated for %s", spec.describe())

    if spec.family == "custom":
        checks.append(_second_derivative_check(spec, t, strict=strict))

    tight = (
        (float(1.0 + slope[usable].min()), float(1.0 + slope[usable].max()))
        if np.any(usable)
        else None
    )
    return CheckReportV1(subject=f"phi {spec.describe()}", checks=checks, tightRange=tight)


def _second_difference(spec: PhiSpec, t: np.ndarray, step: np.ndarray) -> np.ndarray:
    return (
        np.asarray(phi_eval(spec, t + step)) - 2.0 * np.asarray(phi_eval(spec, t)) + np.asarray(phi_eval(spec, t - step))
    ) / step**2


def _second_derivative_check(spec: PhiSpec, t: np.ndarray, *, strict: bool) -> ConditionCheckV1:
    """Sample ``phi''`` by second differences and test them for consistency.

    With a declared ``phi'`` the reference is a central difference of it; otherwise the same
    second difference at twice the step. Disagreement beyond ``SECOND_DIFFERENCE_RTOL`` on the
    scale ``|phi''| + phi / t^2`` marks a point where ``phi`` is not twice differentiable.
    """
    step = t * SECOND_DIFFERENCE_STEP
    with np.errstate(all="ignore"):
        try:
            second = _second_difference(spec, t, step)
            if spec.phiPrime is not None:
                reference = (
                    np.asarray(phi_prime_eval(spec, t + step)) - np.asarray(phi_prime_eval(spec, t - step))
                ) / (2.0 * step)
            else:
                reference = _second_difference(spec, t, 2.0 * step)
            scale = np.abs(reference) + np.abs(np.asarray(phi_eval(spec, t))) / t**2
        except Exception:  # noqa: BLE001
            second = np.full_like(t, np.nan)
            reference = scale = second
    broken = ~(np.isfinite(second) & np.isfinite(reference) & np.isfinite(scale))
    if np.any(broken):
        return ConditionCheckV1(
            name="phi-second-derivative",
            verdict="fail",
            samples=int(t.size),
            violations=int(np.count_nonzero(broken)),
            firstViolationAt=float(t[np.argmax(broken)]),
            detail="second differences of phi are not finite",
        )
    slack = SECOND_DIFFERENCE_RTOL - np.abs(second - reference) / scale
    check = summarize_margins(
        "phi-second-derivative",
        slack,
        t,
        detail="phi'' sampled by second differences agrees with "
        + ("the declared phi'" if spec.phiPrime is not None else "the same difference at twice the step"),
    )
    if check.passed or strict:
        return check
    return check.model_copy(update={"verdict": "warn"})
