from __future__ import annotations

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import integrate, optimize

from phishoot import ivp as ivp_module
from phishoot.errors import DomainError
from phishoot.ivp import (
    ProblemParams,
    SolverSettings,
    Trajectory,
    flux_from_slope,
    flux_system,
    height_system,
    integral_residual,
    integrate_trajectory,
    leading_order_profile,
    picard_start,
    validate_problem,
)
from phishoot.nonlinearity import FSpec, f_primitive
from phishoot.phi_model import PhiSpec
from phishoot.run_defaults import AUTONOMOUS_FIRST_ZERO


def test_problem_params_accept_lambda_alias() -> None:
    params = ProblemParams.model_validate({"alpha": 0, "gamma": 1, "lambda": 2.5, "R": 1})

    assert params.lambda_ == 2.5
    assert params.d is None
    assert params.with_d(0.5).d == 0.5
    with pytest.raises(ValidationError):
        ProblemParams(alpha=0.0, gamma=0.0, lambda_=-1.0, R=1.0)
    with pytest.raises(DomainError):
        params.require_d()


def test_growth_condition() -> None:
    assert ProblemParams(alpha=2.0, gamma=2.0, lambda_=1.0, R=1.0).satisfies_growth_condition(3.0)
    assert not ProblemParams(alpha=1.0, gamma=0.5, lambda_=1.0, R=1.0).satisfies_growth_condition(2.0)
    # alpha < 0 needs gamma >= -alpha / (gamma1 - 1)
    assert not ProblemParams(alpha=-1.0, gamma=0.5, lambda_=1.0, R=1.0).satisfies_growth_condition(2.0)
    assert ProblemParams(alpha=-1.0, gamma=0.5, lambda_=1.0, R=1.0).satisfies_growth_condition(3.0)


def test_validate_problem_reports_condition_and_threshold(unit_phi, cube_root_f) -> None:
    bad = validate_problem(ProblemParams(alpha=1.0, gamma=0.0, lambda_=1.0, R=1.0), unit_phi, cube_root_f)
    assert bad.check("condition-gamma-alpha").verdict == "fail"

    above = validate_problem(ProblemParams(alpha=0.0, gamma=0.0, lambda_=3.0, R=1.0), unit_phi, cube_root_f)
    assert above.check("lambda-below-threshold").verdict == "warn"
    assert above.passed

    tall = validate_problem(ProblemParams(alpha=0.0, gamma=0.0, lambda_=1.0, R=1.0, d=2.0), unit_phi, cube_root_f)
    assert tall.check("height-range").verdict == "fail"


def test_picard_start_matches_taylor_series(autonomous_problem, unit_phi, cube_root_f) -> None:
    traj = integrate_trajectory(autonomous_problem(), unit_phi, cube_root_f, 0.1)

    u, du, v = traj.sample(0.1)[:, 0]
    assert u == pytest.approx(0.995, abs=1e-4)
    assert traj.u[0] == 1.0
    assert traj.du[0] == 0.0
    assert traj.v[0] == 0.0
    assert traj.picard is not None
    assert traj.picard.contraction < 0.5


def test_picard_start_with_vanishing_forcing(autonomous_problem, unit_phi, cube_root_f) -> None:
    start = picard_start(autonomous_problem(lam=1e-12), unit_phi, cube_root_f, 1e-3)

    assert abs(start.u[-1] - 1.0) <= 1e-9
    assert start.picard.distance <= 1e-12 * 2.0


def test_picard_start_follows_leading_order_expansion() -> None:
    params = ProblemParams(alpha=2.0, gamma=2.0, lambda_=1.0, R=1.0, d=1.0)
    phi, f = PhiSpec.power(3.0), FSpec.power(1.0)

    start = picard_start(params, phi, f, 1e-3)

    # the first nodes carry the trapezoid error of the r^(1/2) slope
    away = start.r >= 1e-4
    r = start.r[away]
    expected_drop = (1.0 / 3.0) ** 0.5 * (2.0 / 3.0) * r**1.5
    np.testing.assert_allclose(1.0 - start.u[away], expected_drop, rtol=1e-3)
    np.testing.assert_allclose(leading_order_profile(params, phi, f, r), 1.0 - expected_drop, rtol=1e-14)


def test_picard_start_rejects_nonpositive_forcing(autonomous_problem, unit_phi) -> None:
    shifted = FSpec.custom(lambda t: t - 2.0, d_infinity=1.0)

    with pytest.raises(DomainError) as exc_info:
        picard_start(autonomous_problem(), unit_phi, shifted, 1e-3)

    assert exc_info.value.code == "F_NONPOSITIVE"


def test_picard_start_agrees_with_plain_continuation(autonomous_problem, unit_phi, cube_root_f) -> None:
    params = autonomous_problem()
    eps = 1e-3
    start = picard_start(params, unit_phi, cube_root_f, eps)

    u_half, _, v_half = start.sample(eps / 2)[:, 0]
    sol = integrate.solve_ivp(
        flux_system(params, unit_phi, cube_root_f),
        (eps / 2, eps),
        [u_half, v_half],
        rtol=1e-12,
        atol=1e-14,
    )

    assert abs(sol.y[0][-1] - start.u[-1]) <= 1e-8
    assert abs(sol.y[1][-1] - start.v[-1]) <= 1e-8


def test_first_zero_matches_beta_function_oracle(autonomous_trajectory) -> None:
    zero_nodes = autonomous_trajectory.r[autonomous_trajectory.u == 0.0]

    assert zero_nodes[0] == pytest.approx(AUTONOMOUS_FIRST_ZERO, rel=1e-6)
    assert AUTONOMOUS_FIRST_ZERO == pytest.approx(1.46742, abs=1e-5)
    assert autonomous_trajectory.status == "zero_limit"


def test_energy_is_conserved_on_autonomous_benchmark(first_arc, cube_root_f) -> None:
    energy = 0.5 * first_arc.du**2 + f_primitive(cube_root_f, first_arc.u)

    assert np.max(np.abs(energy - 0.75)) <= 1e-9
    assert first_arc.status == "reached_rmax"


def test_energy_is_conserved_across_zeros(autonomous_trajectory, cube_root_f) -> None:
    traj = autonomous_trajectory
    energy = 0.5 * traj.du**2 + f_primitive(cube_root_f, traj.u)
    at_zero = np.flatnonzero(traj.u == 0.0)

    assert at_zero.size == 5
    assert np.max(np.abs(energy - 0.75)) <= 1e-9
    np.testing.assert_allclose(np.abs(traj.du[at_zero]), np.sqrt(1.5), rtol=0.0, atol=1e-9)
    assert np.all(np.sign(traj.du[at_zero]) == [-1.0, 1.0, -1.0, 1.0, -1.0])


def test_height_system_runs_into_first_zero(first_arc, autonomous_problem, unit_phi, cube_root_f) -> None:
    r_half = optimize.brentq(lambda x: first_arc.sample(x)[0, 0] - 0.5, 0.5, 1.4)
    v_half = float(first_arc.sample(r_half)[2, 0])

    sol = integrate.solve_ivp(
        height_system(autonomous_problem(), unit_phi, cube_root_f),
        (0.5, 0.0),
        [r_half, v_half],
        method="DOP853",
        rtol=1e-12,
        atol=1e-14,
    )

    assert sol.t[-1] == 0.0
    assert sol.y[0][-1] == pytest.approx(AUTONOMOUS_FIRST_ZERO, rel=1e-8)
    assert sol.y[1][-1] == pytest.approx(-np.sqrt(1.5), rel=1e-8)


def test_flux_consistency_and_potential_bound(autonomous_trajectory, unit_phi, cube_root_f) -> None:
    traj = autonomous_trajectory
    v = flux_from_slope(unit_phi, 0.0, traj.r, traj.du)

    assert np.all(np.abs(v - traj.v) <= 1e-10 * (1.0 + np.abs(traj.v)))
    assert np.all(f_primitive(cube_root_f, traj.u) <= f_primitive(cube_root_f, 1.0) + 1e-10)


def test_first_zero_scales_with_height_for_cubic_growth() -> None:
    phi, f = PhiSpec.power(3.0), FSpec.power(1.0, d_infinity=10.0)

    def first_zero(d: float) -> float:
        params = ProblemParams(alpha=2.0, gamma=2.0, lambda_=1.0, R=1.0, d=d)
        traj = integrate_trajectory(params, phi, f, 50.0, max_zero_count=1)
        return float(traj.r[-1])

    assert first_zero(8.0) == pytest.approx(2.0 * first_zero(1.0), rel=1e-6)


def test_integral_residual_of_fresh_trajectory(autonomous_trajectory, autonomous_problem, unit_phi, cube_root_f) -> None:
    assert integral_residual(autonomous_trajectory, autonomous_problem(), unit_phi, cube_root_f) <= 1e-8


def test_integral_residual_detects_perturbed_node(first_arc, autonomous_problem, unit_phi, cube_root_f) -> None:
    r = np.linspace(0.0, 1.3, 27)
    u, du, v = first_arc.sample(r)
    coarse = Trajectory(r=r, u=u, du=du, v=v)
    params = autonomous_problem()

    baseline = integral_residual(coarse, params, unit_phi, cube_root_f)
    bumped = u.copy()
    bumped[int(np.argmin(np.abs(u - 0.3)))] += 1e-2
    perturbed = integral_residual(Trajectory(r=r, u=bumped, du=du, v=v), params, unit_phi, cube_root_f)

    assert baseline < 1e-5
    assert perturbed > 1e-4


def test_residual_and_energy_monitors_agree(first_arc, autonomous_problem, unit_phi, cube_root_f) -> None:
    residual = integral_residual(first_arc, autonomous_problem(), unit_phi, cube_root_f)
    drift = np.max(np.abs(0.5 * first_arc.du**2 + f_primitive(cube_root_f, first_arc.u) - 0.75))

    assert residual <= 10.0 * max(drift, 1e-9)
    assert drift <= 10.0 * max(residual, 1e-9)


def test_step_failure_keeps_partial_trajectory(monkeypatch, autonomous_problem, unit_phi, cube_root_f) -> None:
    real_solve_ivp = ivp_module.integrate.solve_ivp

    def failing_solve_ivp(fun, t_span, y0, **kwargs):
        sol = real_solve_ivp(fun, (t_span[0], t_span[0] + 0.1), y0, **kwargs)
        sol.status = -1
        sol.message = "Required step size is less than spacing between numbers."
        return sol

    monkeypatch.setattr(ivp_module.integrate, "solve_ivp", failing_solve_ivp)

    traj = integrate_trajectory(autonomous_problem(), unit_phi, cube_root_f, 5.0)

    assert traj.status == "step_failure"
    assert "step size" in traj.message
    assert traj.r_end == pytest.approx(0.1 + 1e-3)
    assert np.all(np.diff(traj.r) > 0.0)


def test_tighter_tolerances_move_first_zero_little(autonomous_problem, unit_phi, cube_root_f) -> None:
    def first_zero(settings: SolverSettings) -> float:
        traj = integrate_trajectory(autonomous_problem(), unit_phi, cube_root_f, 3.0, max_zero_count=1, settings=settings)
        return traj.r_end

    coarse = first_zero(SolverSettings(absTol=1e-8, relTol=1e-8))
    fine = first_zero(SolverSettings(absTol=1e-10, relTol=1e-10))

    assert abs(coarse - fine) <= 10.0 * abs(coarse - AUTONOMOUS_FIRST_ZERO) + 1e-9
