"""Zero sequences, the admissible threshold for lambda, and the nodal ladder d_0 > d_1 > ... .

Level ``ell`` is the infimum of heights ``d`` for which the ``(ell + 1)``-st zero of the initial
value problem still sits at or beyond ``R``. It is located by a geometric scan downwards from the
previous level followed by a geometric-mean bisection on the flip of that predicate.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import optimize

from .errors import DomainError, NotBracketedError, NumericError, PhiShootError, ShootingError
from .ivp import ProblemParams, SolverSettings, Trajectory, integrate_trajectory
from .nonlinearity import FSpec, f_eval
from .phi_model import PhiSpec

logger = logging.getLogger(__name__)


class SearchSettings(BaseModel):
    """Level search tolerances and limits.

    ``workers`` is how many scan heights are integrated per batch on a thread pool. Each integration holds the
    GIL for nearly all of its time, so this changes how work is grouped, not how fast it finishes;
    batches are reduced in order of decreasing ``d`` and results do not depend on it.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    rTol: float = Field(default=1e-8, gt=0.0)
    boundaryTol: float = Field(default=1e-8, gt=0.0)
    maxHalvings: int = Field(default=60, ge=1)
    maxBisections: int = Field(default=200, ge=1)
    overshoot: float = Field(default=1e-3, gt=0.0)
    workers: int = Field(default=1, ge=1)


@dataclass(frozen=True)
class ZeroSequence:
    """Zeros ``z_1 < z_2 < ...`` with slopes ``u'(z_k)`` and the extrema ``m_k`` where ``v`` flips."""

    zeros: np.ndarray
    slopes: np.ndarray
    extrema: np.ndarray
    requested: int

    @property
    def complete(self) -> bool:
        return self.zeros.size >= self.requested

    def __len__(self) -> int:
        return int(self.zeros.size)


@dataclass(frozen=True)
class LevelResult:
    ell: int
    d: float
    profile: Trajectory
    zeros: ZeroSequence
    boundary_value: float
    outer_zero: float | None
    bisections: int


@dataclass(frozen=True)
class ShootingResult:
    levels: list[LevelResult] = field(default_factory=list)
    lambda_used: float = math.nan
    lambda_threshold: float | None = None
    r_tol: float = 1e-8
    boundary_tol: float = 1e-8

    @property
    def d_levels(self) -> list[float]:
        return [level.d for level in self.levels]

    @property
    def zero_counts(self) -> list[int]:
        return [len(level.zeros) for level in self.levels]


def _sign_change_roots(traj: Trajectory, values: np.ndarray, row: int, start: int) -> list[float]:
    roots: list[float] = []
    r = traj.r
    for i in range(start, r.size - 1):
        if values[i + 1] == 0.0:
            roots.append(float(r[i + 1]))
        elif values[i] * values[i + 1] < 0.0:
            roots.append(
                optimize.brentq(
                    lambda x: float(traj.sample(x)[row, 0]),
                    r[i],
                    r[i + 1],
                    xtol=1e-14 * max(1.0, float(r[i + 1])),
                    rtol=4.0 * np.finfo(float).eps,
                )
            )
    return roots


def zeros_of(traj: Trajectory, count: int) -> ZeroSequence:
    """First ``count`` sign changes of ``u``, refined on the dense output.

    A sequence shorter than ``count`` means the trajectory ended first; ``complete`` is then
    ``False``.
    """
    zeros = np.asarray(_sign_change_roots(traj, traj.u, 0, 0)[:count], dtype=float)
    slopes = traj.sample(zeros)[1] if zeros.size else np.empty(0)
    extrema = np.asarray(_sign_change_roots(traj, traj.v, 2, 1), dtype=float)
    if zeros.size:
        extrema = extrema[extrema < zeros[-1]]
    sequence = ZeroSequence(zeros=zeros, slopes=slopes, extrema=extrema, requested=count)
    if not sequence.complete:
        logger.info("found %d of %d requested zeros before r=%g", zeros.size, count, traj.r_end)
    return sequence


def lambda_threshold(
    phi: PhiSpec,
    f: FSpec,
    alpha: float,
    gamma: float,
    R: float,
    d_infinity: float,
) -> float:
    """Largest ``lambda`` for which the first-arc descent bound keeps ``u(R) >= 0`` at ``d = d_infinity``.

    ``min`` over ``eta in {gamma1, gamma2}`` of
    ``(gamma + 1) h(1) / f(d_infinity) * [d_infinity (gamma - alpha + eta) / (eta - 1)]^(eta - 1)
    * R^-(gamma - alpha + eta)``.
    """
    top = f_eval(f, d_infinity)
    if not top > 0.0:
        raise DomainError(
            code="F_NONPOSITIVE",
            message=f"f(d_infinity) must be positive; got {top:g}.",
        )
    candidates = []
    for eta in sorted({phi.gamma1, phi.gamma2}):
        reach = gamma - alpha + eta
        candidates.append(
            (gamma + 1.0) * phi.hAt1 / top * (d_infinity * reach / (eta - 1.0)) ** (eta - 1.0) * R ** (-reach)
        )
    return float(min(candidates))


def descent_envelope(phi: PhiSpec, f: FSpec, params: ProblemParams, r: np.ndarray | float) -> np.ndarray | float:
    """Upper bound for ``d - u(r)`` on the first arc.

    Integrates ``max((c t^k / h(1))^(1/(gamma1-1)), (c t^k / h(1))^(1/(gamma2-1)))`` exactly,
    with ``c = lambda f(d) / (gamma + 1)`` and ``k = gamma - alpha + 1``; the larger power
    switches at ``c t^k = h(1)``.
    """
    d = params.require_d()
    arr = np.asarray(r, dtype=float)
    k = params.gamma - params.alpha + 1.0
    c = params.lambda_ * f_eval(f, d) / ((params.gamma + 1.0) * phi.hAt1)
    switch = c ** (-1.0 / k)

    def piece(eta: float, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        power = (params.gamma - params.alpha + eta) / (eta - 1.0)
        return c ** (1.0 / (eta - 1.0)) * (b**power - a**power) / power

    below = np.minimum(arr, switch)
    value = piece(phi.gamma2, np.zeros_like(arr), below) + piece(phi.gamma1, switch, np.maximum(arr, switch))
    return float(value) if arr.ndim == 0 else value


@dataclass(frozen=True)
class _Probe:
    d: float
    trajectory: Trajectory
    zero: float | None
    boundary: float

    def reaches(self, R: float) -> bool:
        return self.zero is None or self.zero >= R


class _LevelSearch:
    def __init__(
        self,
        ell: int,
        params: ProblemParams,
        phi: PhiSpec,
        f: FSpec,
        solver: SolverSettings,
        search: SearchSettings,
    ) -> None:
        self.ell = ell
        self.count = ell + 1
        self.params = params
        self.phi = phi
        self.f = f
        self.solver = solver
        self.search = search
        self.R = params.R

    def probe(self, d: float) -> _Probe:
        traj = integrate_trajectory(
            self.params.with_d(d),
            self.phi,
            self.f,
            self.R * (1.0 + self.search.overshoot),
            max_zero_count=self.count,
            settings=self.solver,
        )
        if traj.status == "step_failure":
            raise NumericError(
                code="STEP_FAILURE",
                message=f"Integration failed at d={d:.17g}: {traj.message}",
                details={"d": d, "r": traj.r_end},
            )
        zeros = zeros_of(traj, self.count)
        zero = float(zeros.zeros[self.count - 1]) if zeros.complete else None
        boundary = float(traj.sample(self.R)[0, 0]) if traj.r_end >= self.R else math.nan
        return _Probe(d=d, trajectory=traj, zero=zero, boundary=boundary)

    def converged(self, probe: _Probe) -> bool:
        return (
            probe.zero is not None
            and abs(probe.zero - self.R) <= self.search.rTol * self.R
            and abs(probe.boundary) <= self.search.boundaryTol * self.f.dInfinity
        )

    def _scan(self, top: _Probe) -> tuple[_Probe, _Probe]:
        heights = [top.d * 2.0 ** (-k) for k in range(1, self.search.maxHalvings + 1)]
        workers = self.search.workers
        hi = top
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for start in range(0, len(heights), workers):
                for probe in pool.map(self.probe, heights[start : start + workers]):
                    if not probe.reaches(self.R):
                        logger.debug("level %d: predicate flips between d=%g and d=%g", self.ell, probe.d, hi.d)
                        return probe, hi
                    hi = probe
        raise NotBracketedError(
            message=(
                f"No height below {top.d:g} brings zero {self.count} inside R={self.R:g} after "
                f"{self.search.maxHalvings} halvings. Zeros shrink to 0 as d -> 0, so check the tolerances."
            ),
            details={"ell": self.ell, "top": top.d},
        )

    def run(self, top_d: float) -> LevelResult:
        top = self.probe(top_d)
        if self.ell == 0 and top.zero is not None and abs(top.zero - self.R) <= self.search.rTol * self.R:
            return self._finish(top, 0)
        if not top.reaches(self.R):
            raise NotBracketedError(
                message=(
                    f"Zero {self.count} of the solution from d={top_d:g} lies at {top.zero:.10g} < R={self.R:g}; "
                    "lambda exceeds the admissible range."
                ),
                details={"ell": self.ell, "d": top_d, "zero": top.zero},
            )
        lo, hi = self._scan(top)
        for bisections in range(1, self.search.maxBisections + 1):
            if self.converged(hi):
                return self._finish(hi, bisections - 1)
            mid = math.sqrt(lo.d * hi.d)
            if mid <= lo.d or mid >= hi.d:
                raise self._not_converged(lo, hi, bisections - 1, "stalled")
            probe = self.probe(mid)
            if probe.reaches(self.R):
                hi = probe
            else:
                lo = probe
        if self.converged(hi):
            return self._finish(hi, self.search.maxBisections)
        raise self._not_converged(lo, hi, self.search.maxBisections, "ran out of bisections")

    def _not_converged(self, lo: _Probe, hi: _Probe, bisections: int, reason: str) -> NumericError:
        logger.warning("level %d: bisection %s at d in [%.17g, %.17g]", self.ell, reason, lo.d, hi.d)
        return NumericError(
            code="BISECTION_NOT_CONVERGED",
            message=(
                f"Level {self.ell}: bisection {reason} after {bisections} steps with d in "
                f"[{lo.d:.17g}, {hi.d:.17g}]; zero {self.count} at {hi.zero!r}, u(R)={hi.boundary:.3e}."
            ),
            details={
                "ell": self.ell,
                "bracket": [lo.d, hi.d],
                "bisections": bisections,
                "zero": hi.zero,
                "boundary": hi.boundary,
            },
        )

    def _finish(self, probe: _Probe, bisections: int) -> LevelResult:
        profile = probe.trajectory.truncate(self.R)
        zeros = zeros_of(profile, self.count)
        interior = zeros.zeros < self.R * (1.0 - self.search.rTol)
        inside = ZeroSequence(
            zeros=zeros.zeros[interior],
            slopes=zeros.slopes[interior],
            extrema=zeros.extrema,
            requested=self.ell,
        )
        if len(inside) != self.ell:
            raise NumericError(
                code="ZERO_COUNT_MISMATCH",
                message=f"Profile at d={probe.d:.17g} has {len(inside)} interior zeros, expected {self.ell}.",
                details={"ell": self.ell, "d": probe.d, "zeros": inside.zeros.tolist()},
            )
        logger.debug("level %d: d=%.17g after %d bisections", self.ell, probe.d, bisections)
        return LevelResult(
            ell=self.ell,
            d=probe.d,
            profile=profile,
            zeros=inside,
            boundary_value=float(profile.u[-1]),
            outer_zero=probe.zero,
            bisections=bisections,
        )


def find_d0(
    params: ProblemParams,
    phi: PhiSpec,
    f: FSpec,
    *,
    solver: SolverSettings | None = None,
    search: SearchSettings | None = None,
) -> LevelResult:
    """Positive solution: the smallest ``d`` in ``(0, d_infinity]`` with ``z_1(d) = R``."""
    return _LevelSearch(0, params, phi, f, solver or SolverSettings(), search or SearchSettings()).run(
        f.dInfinity
    )


def find_d_ell(
    ell: int,
    previous_d: float,
    params: ProblemParams,
    phi: PhiSpec,
    f: FSpec,
    *,
    solver: SolverSettings | None = None,
    search: SearchSettings | None = None,
) -> LevelResult:
    """Nodal solution with ``ell`` interior zeros: ``z_ell(d) < R`` and ``z_{ell+1}(d) = R``."""
    if ell < 1:
        raise ValueError("ell must be >= 1; use find_d0 for the positive solution.")
    level = _LevelSearch(ell, params, phi, f, solver or SolverSettings(), search or SearchSettings()).run(
        previous_d
    )
    if not level.d < previous_d:
        raise NumericError(
            code="LADDER_NOT_DECREASING",
            message=f"Level {ell} height {level.d:.17g} is not below the previous level {previous_d:.17g}.",
        )
    return level


def solve_problem(
    params: ProblemParams,
    phi: PhiSpec,
    f: FSpec,
    L: int,
    *,
    solver: SolverSettings | None = None,
    search: SearchSettings | None = None,
) -> ShootingResult:
    """Levels ``0..L`` of the nodal ladder.

    Raises ``ShootingError`` carrying every completed level if one of them fails.
    """
    if L < 0:
        raise ValueError("L must be >= 0.")
    if not params.satisfies_growth_condition(phi.gamma1):
        raise DomainError(
            code="CONDITION_GAMMA_ALPHA",
            message=f"gamma={params.gamma:g} must be >= max(alpha, -alpha/(gamma1-1)) for alpha={params.alpha:g}.",
        )
    search = search or SearchSettings()
    threshold = lambda_threshold(phi, f, params.alpha, params.gamma, params.R, f.dInfinity)
    if params.lambda_ > threshold:
        logger.warning(
            "lambda=%g exceeds the sufficient threshold %.12g; the positive level may not exist",
            params.lambda_,
            threshold,
        )

    levels: list[LevelResult] = []

    def partial() -> ShootingResult:
        return ShootingResult(
            levels=list(levels),
            lambda_used=params.lambda_,
            lambda_threshold=threshold,
            r_tol=search.rTol,
            boundary_tol=search.boundaryTol,
        )

    for ell in range(L + 1):
        try:
            if ell == 0:
                level = find_d0(params, phi, f, solver=solver, search=search)
            else:
                level = find_d_ell(ell, levels[-1].d, params, phi, f, solver=solver, search=search)
        except PhiShootError as exc:
            raise ShootingError(level=ell, cause=exc, partial=partial()) from exc
        logger.info("level %d: d=%.12g", ell, level.d)
        levels.append(level)
    return partial()
