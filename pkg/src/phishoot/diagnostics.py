"""Energy along trajectories and sampled checks of the structural inequalities for phi."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .ivp import ProblemParams, Trajectory, integral_residual
from .nonlinearity import FSpec, f_primitive
from .phi_model import (
    PhiSpec,
    energy_density,
    h_eval,
    h_inverse,
    h_inverse_bracket,
    h_prime_eval,
    phi_eval,
    phi_prime_eval,
    phi_primitive,
)
from .report_contract import CheckReportV1, ConditionCheckV1, summarize_margins
from .shooting import descent_envelope, zeros_of

logger = logging.getLogger(__name__)

DEFAULT_SEED = 20240601
RESIDUAL_THRESHOLD = 1e-8


@dataclass(frozen=True)
class EnergyProfile:
    r: np.ndarray
    E: np.ndarray
    E0: float
    monotone_violation: float


def energy_profile(traj: Trajectory, params: ProblemParams, phi: PhiSpec, f: FSpec) -> EnergyProfile:
    """``E(r) = r^(alpha-gamma) H(|u'|) + lambda F(u)`` with ``E(0) = lambda F(d)``."""
    r = traj.r
    potential = params.lambda_ * np.asarray(f_primitive(f, traj.u))
    kinetic = np.asarray(energy_density(phi, np.abs(traj.du)))
    positive = r > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        weight = np.where(positive, np.where(positive, r, 1.0) ** (params.alpha - params.gamma), 0.0)
    E = np.where(positive, weight * kinetic, 0.0) + potential
    E0 = params.lambda_ * float(f_primitive(f, traj.d))
    E[~positive] = E0
    jumps = np.diff(E)
    return EnergyProfile(
        r=r,
        E=E,
        E0=E0,
        monotone_violation=float(max(0.0, jumps.max())) if jumps.size else 0.0,
    )


def check_energy(traj: Trajectory, params: ProblemParams, phi: PhiSpec, f: FSpec) -> list[ConditionCheckV1]:
    """Node-to-node dissipation of ``E``; exact conservation when ``alpha = gamma = 0``."""
    energy = energy_profile(traj, params, phi, f)
    slack = 1e-8 * (1.0 + abs(energy.E0))
    checks = [
        summarize_margins(
            "energy-dissipation",
            slack - np.diff(energy.E),
            traj.r[1:],
            detail=f"E[i+1] - E[i] <= {slack:.3g}",
        ),
        summarize_margins(
            "energy-above-potential",
            energy.E - params.lambda_ * np.asarray(f_primitive(f, traj.u)) + 1e-10,
            traj.r,
            detail="E >= lambda F(u)",
        ),
    ]
    if params.alpha == 0.0 and params.gamma == 0.0:
        checks.append(
            summarize_margins(
                "energy-conservation",
                1e-9 - np.abs(energy.E - energy.E0),
                traj.r,
                detail=f"|E - E(0)| <= 1e-9 with E(0) = {energy.E0:.12g}",
            )
        )
    return checks


def check_prop1(traj: Trajectory, params: ProblemParams, phi: PhiSpec, f: FSpec) -> CheckReportV1:
    """``H(|u'|) <= lambda r^(gamma-alpha) (F(d) - F(u))`` and ``F(u) <= F(d)`` at every node."""
    Fd = float(f_primitive(f, traj.d))
    Fu = np.asarray(f_primitive(f, traj.u))
    slack = 1e-8 * (1.0 + params.lambda_ * Fd)
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = params.lambda_ * traj.r ** (params.gamma - params.alpha) * (Fd - Fu)
    kinetic = np.asarray(energy_density(phi, np.abs(traj.du)))
    return CheckReportV1(
        subject=f"kinetic bounds d={traj.d:.12g}",
        checks=[
            summarize_margins(
                "kinetic-bound",
                bound - kinetic + slack,
                traj.r,
                detail="H(|u'|) <= lambda r^(gamma-alpha) (F(d) - F(u))",
            ),
            summarize_margins("potential-bound", Fd + 1e-10 - Fu, traj.r, detail="F(u) <= F(d)"),
        ],
    )


def _first_arc(traj: Trajectory) -> np.ndarray:
    zeros = zeros_of(traj, 1)
    if len(zeros):
        return traj.r <= zeros.zeros[0]
    return np.ones_like(traj.r, dtype=bool)


def check_first_arc(traj: Trajectory) -> ConditionCheckV1:
    arc = _first_arc(traj)
    arc[0] = False
    return summarize_margins(
        "first-arc-descent",
        1e-10 - traj.du[arc],
        traj.r[arc],
        detail="u' <= 1e-10 on (0, z_1]",
    )


def check_envelope(traj: Trajectory, params: ProblemParams, phi: PhiSpec, f: FSpec) -> ConditionCheckV1:
    arc = _first_arc(traj)
    drop = traj.d - traj.u[arc]
    bound = np.asarray(descent_envelope(phi, f, params.with_d(traj.d), traj.r[arc]))
    return summarize_margins(
        "descent-envelope",
        bound - drop + 1e-8 * (1.0 + traj.d),
        traj.r[arc],
        detail="d - u(r) below the first-arc descent envelope",
    )


def check_integral_residual(
    traj: Trajectory,
    params: ProblemParams,
    phi: PhiSpec,
    f: FSpec,
    threshold: float = RESIDUAL_THRESHOLD,
) -> ConditionCheckV1:
    residual = integral_residual(traj, params, phi, f)
    return ConditionCheckV1(
        name="integral-residual",
        verdict="pass" if residual <= threshold else "fail",
        margin=threshold - residual,
        samples=int(traj.r.size),
        violations=0 if residual <= threshold else 1,
        detail=f"max |v + lambda Q| / (1 + |v|) = {residual:.3e}",
    )


def diagnose_trajectory(traj: Trajectory, params: ProblemParams, phi: PhiSpec, f: FSpec) -> CheckReportV1:
    checks = check_energy(traj, params, phi, f)
    checks.extend(check_prop1(traj, params, phi, f).checks)
    checks.append(check_first_arc(traj))
    checks.append(check_envelope(traj, params, phi, f))
    checks.append(check_integral_residual(traj, params, phi, f))
    return CheckReportV1(subject=f"trajectory d={traj.d:.12g} status={traj.status}", checks=checks)


def _relative(lower: np.ndarray, value: np.ndarray, upper: np.ndarray, slack: float) -> np.ndarray:
    scale = np.maximum(np.abs(value), np.finfo(float).tiny)
    return np.minimum(value - lower, upper - value) / scale + slack


def check_bounds_suite(phi: PhiSpec, samples: int = 10_000) -> CheckReportV1:
    """Sampled power sandwiches of ``h``, ``h^{-1}``, ``Phi``, ``[h^{-1}]'`` and ``H``.

    Each check is a pure function of ``phi`` on ``t in [1e-6, 1e6]`` (log-spaced).
    """
    t = np.geomspace(1e-6, 1e6, samples)
    g1, g2, h1 = phi.gamma1, phi.gamma2, phi.hAt1
    slack = 1e-8 if phi.family == "custom" else 1e-10
    h = np.asarray(h_eval(phi, t))
    Phi = np.asarray(phi_primitive(phi, t))
    H = np.asarray(energy_density(phi, t))
    low_pow = np.minimum(t ** (g1 - 1.0), t ** (g2 - 1.0))
    high_pow = np.maximum(t ** (g1 - 1.0), t ** (g2 - 1.0))
    checks = [
        summarize_margins(
            "h-power-sandwich",
            _relative(h1 * low_pow, h, h1 * high_pow, slack),
            t,
            detail="h(1) min(t^(g1-1), t^(g2-1)) <= h(t) <= h(1) max(...)",
        )
    ]

    s = t
    inverse = np.asarray(h_inverse(phi, s))
    lo, hi = h_inverse_bracket(phi, s)
    checks.append(
        summarize_margins(
            "h-inverse-bracket",
            _relative(lo, inverse, hi, slack),
            s,
            detail="h^{-1}(s) between (s/h(1))^(1/(g2-1)) and (s/h(1))^(1/(g1-1))",
        )
    )
    checks.append(
        summarize_margins(
            "h-inverse-round-trip",
            1e-10 * (1.0 + s) - np.abs(np.asarray(h_eval(phi, inverse)) - s),
            s,
            detail="|h(h^{-1}(s)) - s| <= 1e-10 (1 + s)",
        )
    )

    Phi1 = float(phi_primitive(phi, 1.0))
    checks.append(
        summarize_margins(
            "primitive-power-sandwich",
            _relative(Phi1 * np.minimum(t**g1, t**g2), Phi, Phi1 * np.maximum(t**g1, t**g2), slack),
            t,
            detail="Phi(1) min(t^g1, t^g2) <= Phi(t) <= Phi(1) max(...)",
        )
    )
    ratio = t * h / Phi
    checks.append(
        summarize_margins(
            "doubling-ratio",
            _relative(np.full_like(t, g1), ratio, np.full_like(t, g2), slack),
            t,
            detail=f"{g1:g} <= t Phi'(t) / Phi(t) <= {g2:g}",
        )
    )

    small = s[s <= min(1.0, h1)]
    small_inverse = inverse[s <= min(1.0, h1)]
    derivative = 1.0 / np.asarray(h_prime_eval(phi, small_inverse))
    proof_bound = small_inverse ** (2.0 - g2) / (h1 * (g1 - 1.0))
    checks.append(
        summarize_margins(
            "h-inverse-derivative-bound",
            (proof_bound - derivative) / proof_bound + slack,
            small,
            detail="[h^{-1}]'(s) <= h^{-1}(s)^(2-g2) / (h(1)(g1-1)) for s <= min(1, h(1))",
        )
    )
    unit = s[s <= 1.0]
    unit_derivative = 1.0 / np.asarray(h_prime_eval(phi, inverse[s <= 1.0]))
    printed = unit ** ((2.0 - g2) / (g2 - 1.0)) / (h1**g2 * (g1 - 1.0))
    printed_check = summarize_margins(
        "h-inverse-derivative-unit-form",
        (printed - unit_derivative) / printed + slack,
        unit,
        detail="[h^{-1}]'(s) <= s^((2-g2)/(g2-1)) / (h(1)^g2 (g1-1)) for s <= 1, as printed; may fail when h(1) != 1",
    )
    if not printed_check.passed:
        printed_check = printed_check.model_copy(update={"verdict": "warn"})
    checks.append(printed_check)

    th = t * h
    checks.append(
        summarize_margins(
            "energy-density-vs-primitive",
            _relative((g1 - 1.0) * Phi, H, (g2 - 1.0) * Phi, slack),
            t,
            detail="(g1-1) Phi <= H <= (g2-1) Phi",
        )
    )
    checks.append(
        summarize_margins(
            "energy-density-vs-flux",
            _relative((g1 - 1.0) / g1 * th, H, (g2 - 1.0) / g2 * th, slack),
            t,
            detail="(g1-1)/g1 t Phi' <= H <= (g2-1)/g2 t Phi'",
        )
    )
    checks.append(
        summarize_margins(
            "energy-density-increasing",
            np.diff(H) / np.maximum(H[1:], np.finfo(float).tiny) + slack,
            t[1:],
            detail="H nondecreasing",
        )
    )
    checks.append(
        ConditionCheckV1(
            name="energy-density-zero",
            verdict="pass" if float(energy_density(phi, 0.0)) == 0.0 and np.all(H > 0.0) else "fail",
            samples=int(t.size) + 1,
            violations=int(np.count_nonzero(H <= 0.0)),
            detail="H(0) = 0 and H(t) > 0 for t > 0",
        )
    )
    report = CheckReportV1(subject=f"bounds {phi.describe()}", checks=checks)
    if not report.passed:
        logger.warning("bounds suite failed for %s: %s", phi.describe(), [c.name for c in report.failures()])
    return report


def _flux_map(phi: PhiSpec, eta: np.ndarray) -> np.ndarray:
    """``a(eta) = phi(|eta|) eta = h(|eta|) eta / |eta|``, zero at the origin."""
    norm = np.linalg.norm(eta, axis=-1, keepdims=True)
    safe = np.where(norm > 0.0, norm, 1.0)
    return np.where(norm > 0.0, np.asarray(h_eval(phi, norm)) / safe * eta, 0.0)


def simon_sides(phi: PhiSpec, eta: np.ndarray, eta_prime: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Both sides of the strong monotonicity bound

    ``<a(eta) - a(eta'), eta - eta'> >= min(4, 4 Gamma1) |eta - eta'| / (1 + |eta| + |eta'|) Phi(|eta - eta'| / 4)``.
    """
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    eta_prime = np.atleast_2d(np.asarray(eta_prime, dtype=float))
    diff = eta - eta_prime
    lhs = np.sum((_flux_map(phi, eta) - _flux_map(phi, eta_prime)) * diff, axis=-1)
    gap = np.linalg.norm(diff, axis=-1)
    scale = 1.0 + np.linalg.norm(eta, axis=-1) + np.linalg.norm(eta_prime, axis=-1)
    rhs = min(4.0, 4.0 * phi.Gamma1) * gap / scale * np.asarray(phi_primitive(phi, gap / 4.0))
    return lhs, rhs


def check_simon(phi: PhiSpec, dim: int, trials: int = 100_000, seed: int = DEFAULT_SEED) -> CheckReportV1:
    """Seeded random check of the strong monotonicity bound and of the Jacobian quadratic form

    ``phi(|eta|) |xi|^2 + phi'(|eta|) <eta, xi>^2 / |eta| >= Gamma1 phi(|eta|) |xi|^2``.
    """
    if dim not in (1, 2, 3):
        raise ValueError("dim must be 1, 2 or 3.")
    rng = np.random.default_rng(seed)

    def draw(n: int) -> np.ndarray:
        direction = rng.normal(size=(n, dim))
        direction /= np.maximum(np.linalg.norm(direction, axis=-1, keepdims=True), np.finfo(float).tiny)
        return direction * 10.0 ** rng.uniform(-3.0, 3.0, size=(n, 1))

    eta = draw(trials)
    eta_prime = draw(trials)
    edge = max(1, trials // 100)
    eta_prime[:edge] = 0.0
    eta_prime[edge : 2 * edge] = eta[edge : 2 * edge]

    lhs, rhs = simon_sides(phi, eta, eta_prime)
    tol = 1e-10 * (1.0 + np.abs(lhs))
    checks = [
        summarize_margins(
            "strong-monotonicity",
            lhs - rhs + tol,
            np.linalg.norm(eta - eta_prime, axis=-1),
            detail=f"dim={dim}, Gamma1={phi.Gamma1:g}, {trials} pairs incl. eta'=0 and eta=eta'",
        )
    ]

    xi = rng.normal(size=(trials, dim))
    norm = np.linalg.norm(eta, axis=-1)
    phi_n = np.asarray(phi_eval(phi, norm))
    dphi_n = np.asarray(phi_prime_eval(phi, norm))
    xi_sq = np.sum(xi * xi, axis=-1)
    quadratic = phi_n * xi_sq + dphi_n * np.sum(eta * xi, axis=-1) ** 2 / norm
    floor = phi.Gamma1 * phi_n * xi_sq
    checks.append(
        summarize_margins(
            "jacobian-quadratic-form",
            (quadratic - floor) / np.maximum(phi_n * xi_sq, np.finfo(float).tiny) + 1e-10,
            norm,
            detail="Jacobian of eta -> phi(|eta|) eta is bounded below by Gamma1 phi(|eta|)",
        )
    )
    return CheckReportV1(subject=f"strong monotonicity {phi.describe()} dim={dim}", checks=checks, seed=seed)
