"""Singular initial value problem

    -(r^alpha phi(|u'|) u')' = lambda r^gamma f(u),  u(0) = d,  u'(0) = 0.

The origin is passed with a Picard fixed-point iteration on ``[0, eps]``; the rest of the
trajectory is integrated in the flux variables ``(u, v)`` with ``v = r^alpha phi(|u'|) u'``:

    u' = sgn(v) h^{-1}(r^{-alpha} |v|),    v' = -lambda r^gamma f(u).

``v'`` stays regular where ``u'`` vanishes, so interior extrema need no special handling.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Any, Callable, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import integrate, interpolate

from .errors import DomainError, NumericError
from .nonlinearity import FSpec, f_eval
from .phi_model import PhiSpec, h_eval, h_inverse
from .report_contract import CheckReportV1, ConditionCheckV1

logger = logging.getLogger(__name__)

TrajectoryStatus = Literal["reached_rmax", "zero_limit", "dead_core", "step_failure"]

GAUSS_ORDER = 8
MAX_PICARD_HALVINGS = 60
MAX_PICARD_ITERATIONS = 200
APPROACH_REFINEMENTS = 4
DEPARTURE_SLOPE_RATIO = 0.5
NEAR_ZERO_TOL_FACTOR = 1e-2
NEAR_ZERO_MIN_RTOL = 1e-13


class ProblemParams(BaseModel):
    """Coefficients of the equation and the shooting height ``d`` (``None`` while searching)."""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    alpha: float
    gamma: float
    lambda_: float = Field(alias="lambda", gt=0.0)
    R: float = Field(gt=0.0)
    d: float | None = None

    @model_validator(mode="after")
    def _check_height(self) -> "ProblemParams":
        if self.d is not None and not self.d > 0.0:
            raise ValueError("d must be positive.")
        return self

    def with_d(self, d: float) -> "ProblemParams":
        return self.model_copy(update={"d": float(d)})

    def satisfies_growth_condition(self, gamma1: float) -> bool:
        """``gamma >= max(alpha, -alpha / (gamma1 - 1))``."""
        return self.gamma >= max(self.alpha, -self.alpha / (gamma1 - 1.0))

    def require_d(self) -> float:
        if self.d is None:
            raise DomainError(code="HEIGHT_REQUIRED", message="An initial height d is required.")
        return self.d


class SolverSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    eps0: float | None = Field(default=None, gt=0.0)
    absTol: float = Field(default=1e-10, gt=0.0)
    relTol: float = Field(default=1e-10, gt=0.0)
    deadCoreTol: float = Field(default=1e-13, gt=0.0)
    picardNodes: int = Field(default=2049, ge=17)
    picardTol: float = Field(default=1e-12, gt=0.0)
    maxContraction: float = Field(default=0.5, gt=0.0, lt=1.0)

    def initial_eps(self, R: float) -> float:
        return self.eps0 if self.eps0 is not None else 1e-3 * min(1.0, R)


@dataclass(frozen=True)
class PicardInfo:
    eps: float
    contraction: float
    iterations: int
    halvings: int
    distance: float


@dataclass(frozen=True)
class Trajectory:
    """Nodes of a computed solution; ``dense`` maps radii to rows ``(u, u', v)``."""

    r: np.ndarray
    u: np.ndarray
    du: np.ndarray
    v: np.ndarray
    status: TrajectoryStatus = "reached_rmax"
    dense: Callable[[np.ndarray], np.ndarray] | None = None
    picard: PicardInfo | None = None
    message: str | None = None

    @property
    def d(self) -> float:
        return float(self.u[0])

    @property
    def r_end(self) -> float:
        return float(self.r[-1])

    def sample(self, radii: np.ndarray | float) -> np.ndarray:
        x = np.atleast_1d(np.asarray(radii, dtype=float))
        if self.dense is not None:
            return np.asarray(self.dense(x), dtype=float)
        u_spline = interpolate.CubicHermiteSpline(self.r, self.u, self.du)
        v_spline = interpolate.CubicSpline(self.r, self.v)
        return np.vstack([u_spline(x), u_spline(x, 1), v_spline(x)])

    def truncate(self, r_max: float) -> "Trajectory":
        keep = self.r < r_max
        if self.r[-1] <= r_max:
            return self
        end = self.sample(r_max)[:, 0]
        return replace(
            self,
            r=np.append(self.r[keep], r_max),
            u=np.append(self.u[keep], end[0]),
            du=np.append(self.du[keep], end[1]),
            v=np.append(self.v[keep], end[2]),
        )


class _PiecewiseDense:
    def __init__(self) -> None:
        self._starts: list[float] = []
        self._pieces: list[Callable[[np.ndarray], np.ndarray]] = []

    def add(self, start: float, piece: Callable[[np.ndarray], np.ndarray]) -> None:
        self._starts.append(start)
        self._pieces.append(piece)

    def __call__(self, radii: np.ndarray) -> np.ndarray:
        x = np.atleast_1d(np.asarray(radii, dtype=float))
        index = np.clip(np.searchsorted(self._starts, x, side="right") - 1, 0, len(self._pieces) - 1)
        out = np.empty((2, x.size))
        for piece_index in np.unique(index):
            mask = index == piece_index
            out[:, mask] = np.asarray(self._pieces[piece_index](x[mask])).reshape(2, -1)
        return out


def slope_from_flux(phi: PhiSpec, alpha: float, r: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``u' = sgn(v) h^{-1}(r^{-alpha} |v|)``, with ``u'(0) = 0``."""
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    positive = r > 0.0
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        weight = np.where(positive, np.where(positive, r, 1.0) ** (-alpha), 0.0)
    flux = np.where(positive, np.abs(v) * weight, 0.0)
    return np.sign(v) * np.asarray(h_inverse(phi, flux))


def flux_from_slope(phi: PhiSpec, alpha: float, r: np.ndarray, du: np.ndarray) -> np.ndarray:
    """``v = r^alpha h(|u'|) sgn(u')``."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        weight = np.where(r > 0.0, np.where(r > 0.0, r, 1.0) ** alpha, 0.0)
    return weight * np.asarray(h_eval(phi, np.abs(du))) * np.sign(du)


def flux_system(
    params: ProblemParams, phi: PhiSpec, f: FSpec
) -> Callable[[float, np.ndarray], list[float]]:
    """Right-hand side of ``(u, v)' = (sgn(v) h^{-1}(r^{-alpha}|v|), -lambda r^gamma f(u))`` for ``r > 0``."""
    lam, alpha, gamma = params.lambda_, params.alpha, params.gamma

    def rhs(r: float, y: np.ndarray) -> list[float]:
        u, v = y
        if v == 0.0:
            slope = 0.0
        else:
            slope = math.copysign(float(h_inverse(phi, abs(v) * r ** (-alpha))), v)
        return [slope, -lam * r**gamma * float(f_eval(f, u))]

    return rhs


def validate_problem(params: ProblemParams, phi: PhiSpec, f: FSpec) -> CheckReportV1:
    from .shooting import lambda_threshold

    bound = max(params.alpha, -params.alpha / (phi.gamma1 - 1.0))
    checks = [
        ConditionCheckV1(
            name="condition-gamma-alpha",
            verdict="pass" if params.satisfies_growth_condition(phi.gamma1) else "fail",
            margin=params.gamma - bound,
            detail=f"gamma={params.gamma:g} >= max(alpha, -alpha/(gamma1-1))={bound:g}",
        )
    ]
    if params.d is not None:
        checks.append(
            ConditionCheckV1(
                name="height-range",
                verdict="pass" if 0.0 < params.d <= f.dInfinity else "fail",
                margin=f.dInfinity - params.d,
                detail=f"0 < d={params.d:g} <= dInfinity={f.dInfinity:g}",
            )
        )
    if checks[0].passed and f_eval(f, f.dInfinity) > 0.0:
        threshold = lambda_threshold(phi, f, params.alpha, params.gamma, params.R, f.dInfinity)
        checks.append(
            ConditionCheckV1(
                name="lambda-below-threshold",
                verdict="pass" if params.lambda_ <= threshold else "warn",
                margin=threshold - params.lambda_,
                detail=f"lambda={params.lambda_:g}, sufficient threshold {threshold:.12g}",
            )
        )
    return CheckReportV1(subject="problem", checks=checks)


def leading_order_profile(params: ProblemParams, phi: PhiSpec, f: FSpec, r: np.ndarray | float) -> np.ndarray:
    """Small-``r`` expansion ``d - c r^((gamma-alpha+gamma1)/(gamma1-1))`` of the first arc."""
    d = params.require_d()
    g1 = phi.gamma1
    rate = (params.lambda_ * f_eval(f, d) / ((params.gamma + 1.0) * phi.hAt1)) ** (1.0 / (g1 - 1.0))
    power = (params.gamma - params.alpha + g1) / (g1 - 1.0)
    return d - rate * (g1 - 1.0) / (params.gamma - params.alpha + g1) * np.asarray(r, dtype=float) ** power


def _picard_sweep(
    u: np.ndarray,
    r: np.ndarray,
    params: ProblemParams,
    phi: PhiSpec,
    f: FSpec,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    forcing = r**params.gamma * np.asarray(f_eval(f, u))
    v = -params.lambda_ * integrate.cumulative_trapezoid(forcing, r, initial=0.0)
    du = slope_from_flux(phi, params.alpha, r, v)
    u_next = params.require_d() + integrate.cumulative_trapezoid(du, r, initial=0.0)
    return u_next, v, du


def picard_start(
    params: ProblemParams,
    phi: PhiSpec,
    f: FSpec,
    eps: float,
    *,
    settings: SolverSettings | None = None,
) -> Trajectory:
    """Fixed point of ``T(u)(r) = d - int_0^r h^{-1}(t^{-alpha} int_0^t lambda s^gamma f(u) ds) dt``.

    ``eps`` is halved until the measured contraction factor drops below
    ``settings.maxContraction`` and successive iterates agree to ``picardTol (1 + d)``.
    """
    settings = settings or SolverSettings()
    d = params.require_d()
    if not f_eval(f, d) > 0.0:
        raise DomainError(
            code="F_NONPOSITIVE",
            message=f"f(d) must be positive for d > 0; got f({d:g}) = {f_eval(f, d):g}.",
        )
    tol = settings.picardTol * (1.0 + d)

    for halvings in range(MAX_PICARD_HALVINGS):
        r = np.linspace(0.0, eps, settings.picardNodes)
        u = np.full_like(r, d)
        previous: float | None = None
        factors: list[float] = []
        distance = math.inf
        converged = False
        for iteration in range(1, MAX_PICARD_ITERATIONS + 1):
            u_next, v, du = _picard_sweep(u, r, params, phi, f)
            distance = float(np.max(np.abs(u_next - u)))
            u = u_next
            if previous is not None and previous > 0.0:
                factors.append(distance / previous)
            if distance <= tol:
                converged = True
                break
            if len(factors) >= 3 and min(factors[-3:]) > settings.maxContraction:
                break
            previous = distance
        contraction = max(factors[-3:]) if factors else 0.0
        if converged and contraction <= settings.maxContraction:
            _, v, du = _picard_sweep(u, r, params, phi, f)
            logger.debug(
                "picard start: eps=%g iterations=%d contraction=%.3g", eps, iteration, contraction
            )
            forcing = -params.lambda_ * r**params.gamma * np.asarray(f_eval(f, u))
            u_spline = interpolate.CubicHermiteSpline(r, u, du)
            v_spline = interpolate.CubicHermiteSpline(r, v, forcing)

            def sample(x: np.ndarray) -> np.ndarray:
                flux = v_spline(x)
                return np.vstack([u_spline(x), slope_from_flux(phi, params.alpha, x, flux), flux])

            return Trajectory(
                r=r,
                u=u,
                du=du,
                v=v,
                dense=sample,
                picard=PicardInfo(
                    eps=eps,
                    contraction=contraction,
                    iterations=iteration,
                    halvings=halvings,
                    distance=distance,
                ),
            )
        logger.debug("picard start: contraction %.3g at eps=%g, halving", contraction, eps)
        eps *= 0.5
        if eps < np.finfo(float).tiny:
            break

    raise NumericError(
        code="PICARD_UNDERFLOW",
        message="Picard iteration did not contract before eps underflowed.",
        details={"eps": eps, "d": d},
    )


def height_system(
    params: ProblemParams, phi: PhiSpec, f: FSpec
) -> Callable[[float, np.ndarray], list[float]]:
    """``(r, v)`` as functions of ``u`` on a piece where ``u`` is monotone.

    ``dr/du = 1 / u'`` and ``dv/du = -lambda r^gamma f(u) / u'``. A zero of ``u`` is then a fixed
    end of the integration interval rather than a point inside a step.
    """
    lam, alpha, gamma = params.lambda_, params.alpha, params.gamma

    def rhs(u: float, y: np.ndarray) -> list[float]:
        r, v = y
        slope = math.copysign(float(h_inverse(phi, abs(v) * r ** (-alpha))), v)
        return [1.0 / slope, -lam * r**gamma * float(f_eval(f, u)) / slope]

    return rhs


def _crossing_event(direction: float) -> Callable[[float, np.ndarray], float]:
    def crossing(r: float, y: np.ndarray) -> float:
        return y[0]

    crossing.terminal = True  # type: ignore[attr-defined]
    crossing.direction = direction  # type: ignore[attr-defined]
    return crossing


def _departure_events(v_zero: float, r_max: float) -> list[Callable[[float, np.ndarray], float]]:
    def slope_decay(u: float, y: np.ndarray) -> float:
        return abs(y[1]) - DEPARTURE_SLOPE_RATIO * abs(v_zero)

    def past_end(u: float, y: np.ndarray) -> float:
        return y[0] - r_max

    slope_decay.terminal = True  # type: ignore[attr-defined]
    slope_decay.direction = -1.0  # type: ignore[attr-defined]
    past_end.terminal = True  # type: ignore[attr-defined]
    past_end.direction = 1.0  # type: ignore[attr-defined]
    return [slope_decay, past_end]


def _monotone_piece(
    rhs: Callable[[float, np.ndarray], list[float]],
    u_from: float,
    u_to: float,
    r: float,
    v: float,
    settings: SolverSettings,
    events: list[Callable[[float, np.ndarray], float]] | None = None,
) -> Any | None:
    """Integrate ``(r, v)`` in ``u`` from ``u_from`` to ``u_to``; ``None`` when ``u'`` vanishes on the way."""
    try:
        sol = integrate.solve_ivp(
            rhs,
            (u_from, u_to),
            [r, v],
            method="DOP853",
            rtol=max(settings.relTol * NEAR_ZERO_TOL_FACTOR, NEAR_ZERO_MIN_RTOL),
            atol=settings.absTol * NEAR_ZERO_TOL_FACTOR,
            events=events,
        )
    except ZeroDivisionError:
        return None
    if sol.status == -1 or sol.t.size < 2:
        return None
    return sol


def _hermite_piece(
    params: ProblemParams, phi: PhiSpec, f: FSpec, r: np.ndarray, u: np.ndarray, v: np.ndarray
) -> Callable[[np.ndarray], np.ndarray] | None:
    keep = np.concatenate([[True], np.diff(r) > 0.0])
    r, u, v = r[keep], u[keep], v[keep]
    if r.size < 2:
        return None
    du = slope_from_flux(phi, params.alpha, r, v)
    dv = -params.lambda_ * r**params.gamma * np.asarray(f_eval(f, u))
    u_spline = interpolate.CubicHermiteSpline(r, u, du)
    v_spline = interpolate.CubicHermiteSpline(r, v, dv)
    return lambda x: np.vstack([u_spline(x), v_spline(x)])


def integrate_trajectory(
    params: ProblemParams,
    phi: PhiSpec,
    f: FSpec,
    r_max: float,
    max_zero_count: int | None = None,
    *,
    settings: SolverSettings | None = None,
) -> Trajectory:
    """Solve the initial value problem on ``[0, r_max]``.

    Stops early after ``max_zero_count`` sign changes of ``u`` (status ``zero_limit``) or at a
    dead core where ``u`` and ``v`` both vanish (status ``dead_core``).

    ``f`` may have a kink at ``u = 0``, so no Runge-Kutta step in ``r`` is allowed to straddle a
    zero. The step that contains a zero is replaced by a piece integrated in ``u`` down to
    ``u = 0`` exactly, and the solution leaves the zero the same way before stepping in ``r``
    again.
    """
    settings = settings or SolverSettings()
    if not r_max > 0.0:
        raise DomainError(code="INVALID_RADIUS", message="r_max must be positive.")
    d = params.require_d()
    eps = min(settings.initial_eps(params.R), 0.5 * r_max)
    start = picard_start(params, phi, f, eps, settings=settings)

    alpha = params.alpha
    rhs = flux_system(params, phi, f)
    along_height = height_system(params, phi, f)
    u_tol = settings.deadCoreTol * (1.0 + d)
    v_tol = settings.deadCoreTol

    def dead_core(r: float, y: np.ndarray) -> float:
        return max(abs(y[0]) / u_tol, abs(y[1]) / v_tol) - 1.0

    dead_core.terminal = True  # type: ignore[attr-defined]
    dead_core.direction = -1.0  # type: ignore[attr-defined]

    dense = _PiecewiseDense()
    dense.add(0.0, lambda x: start.sample(x)[[0, 2]])
    radii = [start.r]
    heights = [start.u]
    fluxes = [start.v]

    def keep_nodes(r_nodes: np.ndarray, u_nodes: np.ndarray, v_nodes: np.ndarray) -> None:
        radii.append(np.asarray(r_nodes, dtype=float))
        heights.append(np.asarray(u_nodes, dtype=float))
        fluxes.append(np.asarray(v_nodes, dtype=float))

    r0 = start.r_end
    y0 = [float(start.u[-1]), float(start.v[-1])]
    direction = -1.0
    zeros = 0
    refinements = 0
    max_step = np.inf
    status: TrajectoryStatus = "reached_rmax"
    message: str | None = None

    while r0 < r_max:
        sol = integrate.solve_ivp(
            rhs,
            (r0, r_max),
            y0,
            method="RK45",
            rtol=settings.relTol,
            atol=settings.absTol,
            max_step=max_step,
            dense_output=True,
            events=[_crossing_event(direction), dead_core],
        )
        crossed = sol.status != -1 and not sol.t_events[1].size and sol.t_events[0].size > 0
        if not crossed:
            if sol.t.size > 1:
                keep_nodes(sol.t[1:], sol.y[0][1:], sol.y[1][1:])
                dense.add(r0, sol.sol)
            if sol.status == -1:
                status = "step_failure"
                message = str(sol.message)
                logger.warning("integration failed at r=%g: %s", sol.t[-1], sol.message)
            elif sol.t_events[1].size:
                status = "dead_core"
                logger.debug("dead core reached at r=%g", sol.t_events[1][0])
            break

        # the last accepted node before the zero; the event point itself is interpolated
        keep_nodes(sol.t[1:-1], sol.y[0][1:-1], sol.y[1][1:-1])
        dense.add(r0, sol.sol)
        r_last = float(sol.t[-2])
        u_last, v_last = float(sol.y[0][-2]), float(sol.y[1][-2])
        if u_last * v_last >= 0.0 and refinements < APPROACH_REFINEMENTS:
            # an extremum shares the last step with the zero; retake that step in smaller ones
            refinements += 1
            max_step = (float(sol.t[-1]) - r_last) / 8.0
            r0, y0 = r_last, [u_last, v_last]
            continue
        refinements = 0
        max_step = np.inf

        approach = _monotone_piece(along_height, u_last, 0.0, r_last, v_last, settings) if u_last * v_last < 0.0 else None
        if approach is None:
            zero, v_zero = float(sol.t[-1]), float(sol.y[1][-1])
            logger.debug("zero near r=%g taken from the dense output", zero)
            keep_nodes(np.array([zero]), np.array([0.0]), np.array([v_zero]))
        else:
            zero, v_zero = float(approach.y[0][-1]), float(approach.y[1][-1])
            keep_nodes(approach.y[0][1:], approach.t[1:], approach.y[1][1:])
            heights[-1][-1] = 0.0
            piece = _hermite_piece(params, phi, f, approach.y[0], approach.t, approach.y[1])
            if piece is not None:
                dense.add(r_last, piece)
        if zero > r_max:
            break

        zeros += 1
        direction = -direction
        if max_zero_count is not None and zeros >= max_zero_count:
            status = "zero_limit"
            break
        if abs(v_zero) <= v_tol:
            status = "dead_core"
            logger.debug("dead core reached at r=%g", zero)
            break

        target = math.copysign(abs(u_last), v_zero)
        departure = _monotone_piece(
            along_height, 0.0, target, zero, v_zero, settings, events=_departure_events(v_zero, r_max)
        )
        if departure is None:
            r0, y0 = zero, [0.0, v_zero]
            continue
        keep_nodes(departure.y[0][1:], departure.t[1:], departure.y[1][1:])
        piece = _hermite_piece(params, phi, f, departure.y[0], departure.t, departure.y[1])
        if piece is not None:
            dense.add(zero, piece)
        if departure.t_events[1].size:
            break
        r0 = float(departure.y[0][-1])
        y0 = [float(departure.t[-1]), float(departure.y[1][-1])]

    r = np.concatenate(radii)
    u = np.concatenate(heights)
    v = np.concatenate(fluxes)
    keep = np.concatenate([[True], np.diff(r) > 0.0])
    r, u, v = r[keep], u[keep], v[keep]
    du = slope_from_flux(phi, alpha, r, v)

    def sample(x: np.ndarray) -> np.ndarray:
        state = dense(x)
        return np.vstack([state[0], slope_from_flux(phi, alpha, x, state[1]), state[1]])

    traj = Trajectory(
        r=r,
        u=u,
        du=du,
        v=v,
        status=status,
        dense=sample,
        picard=start.picard,
        message=message,
    )
    return traj.truncate(r_max) if traj.r_end > r_max else traj


def integral_residual(traj: Trajectory, params: ProblemParams, phi: PhiSpec, f: FSpec) -> float:
    """``max_i |v_i + lambda Q(r_i)| / (1 + |v_i|)`` with ``Q(r) = int_0^r t^gamma f(u(t)) dt``.

    ``Q`` is re-integrated with Gauss-Legendre panels on the stored dense output, independent of
    the integrator's own accumulation of ``v``.
    """
    nodes, weights = np.polynomial.legendre.leggauss(GAUSS_ORDER)
    a = traj.r[:-1]
    b = traj.r[1:]
    half = 0.5 * (b - a)
    points = (0.5 * (a + b))[:, None] + half[:, None] * nodes[None, :]
    heights = traj.sample(points.reshape(-1))[0].reshape(points.shape)
    integrand = points**params.gamma * np.asarray(f_eval(f, heights))
    panels = half * (integrand @ weights)
    q = np.concatenate([[0.0], np.cumsum(panels)])
    return float(np.max(np.abs(traj.v + params.lambda_ * q) / (1.0 + np.abs(traj.v))))
