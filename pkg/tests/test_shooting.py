from __future__ import annotations

import numpy as np
import pytest

from phishoot import shooting
from phishoot.errors import DomainError, NotBracketedError, NumericError, ShootingError
from phishoot.ivp import ProblemParams, Trajectory, integrate_trajectory
from phishoot.nonlinearity import FSpec
from phishoot.phi_model import PhiSpec
from phishoot.run_defaults import AUTONOMOUS_FIRST_ZERO, autonomous_level
from phishoot.shooting import (
    SearchSettings,
    descent_envelope,
    find_d0,
    find_d_ell,
    lambda_threshold,
    solve_problem,
    zeros_of,
)

INSIDE_RADIUS = 0.9 * AUTONOMOUS_FIRST_ZERO


def test_zeros_of_refines_between_nodes() -> None:
    r = np.linspace(0.0, 3.0, 3001)
    traj = Trajectory(r=r, u=np.cos(r), du=-np.sin(r), v=-np.sin(r))

    sequence = zeros_of(traj, 1)

    assert sequence.complete
    assert sequence.zeros[0] == pytest.approx(np.pi / 2, abs=1e-10)
    assert sequence.slopes[0] == pytest.approx(-1.0, abs=1e-8)
    assert sequence.extrema.size == 0


def test_zeros_of_positive_trajectory_is_incomplete() -> None:
    r = np.linspace(0.0, 2.0, 201)
    traj = Trajectory(r=r, u=1.0 + r**2, du=2.0 * r, v=2.0 * r)

    sequence = zeros_of(traj, 2)

    assert len(sequence) == 0
    assert not sequence.complete


def test_autonomous_zeros_are_odd_multiples_of_first(autonomous_trajectory) -> None:
    sequence = zeros_of(autonomous_trajectory, 5)

    expected = [(2 * k - 1) * AUTONOMOUS_FIRST_ZERO for k in range(1, 6)]
    np.testing.assert_allclose(sequence.zeros, expected, rtol=1e-6)
    np.testing.assert_allclose(np.abs(sequence.slopes), np.sqrt(1.5), rtol=1e-6)
    assert np.all(sequence.slopes[::2] < 0.0)
    assert np.all(sequence.slopes[1::2] > 0.0)


def test_one_extremum_between_consecutive_zeros(autonomous_trajectory) -> None:
    sequence = zeros_of(autonomous_trajectory, 5)

    assert sequence.extrema.size == 4
    for k, m in enumerate(sequence.extrema):
        assert sequence.zeros[k] < m < sequence.zeros[k + 1]
    np.testing.assert_allclose(sequence.extrema, [2 * k * AUTONOMOUS_FIRST_ZERO for k in range(1, 5)], rtol=1e-6)


def test_lambda_threshold_closed_form(unit_phi, cube_root_f) -> None:
    assert lambda_threshold(unit_phi, cube_root_f, 0.0, 0.0, 1.0, 1.0) == pytest.approx(2.0, rel=1e-14)
    assert lambda_threshold(unit_phi, cube_root_f, 0.0, 0.0, 2.0, 1.0) == pytest.approx(0.5, rel=1e-14)


def test_lambda_threshold_is_sufficient_for_benchmark(autonomous_problem, unit_phi, cube_root_f) -> None:
    threshold = lambda_threshold(unit_phi, cube_root_f, 0.0, 0.0, 1.0, 1.0)
    params = autonomous_problem(R=1.0, lam=threshold)

    traj = integrate_trajectory(params, unit_phi, cube_root_f, 3.0, max_zero_count=1)

    assert traj.r_end == pytest.approx(AUTONOMOUS_FIRST_ZERO / np.sqrt(2.0), rel=1e-6)
    assert traj.r_end >= 1.0


def test_lambda_threshold_rejects_nonpositive_forcing(unit_phi) -> None:
    with pytest.raises(DomainError) as exc_info:
        lambda_threshold(unit_phi, FSpec.custom(lambda t: t - 2.0, d_infinity=1.0), 0.0, 0.0, 1.0, 1.0)

    assert exc_info.value.code == "F_NONPOSITIVE"


def test_descent_envelope_bounds_first_arc(first_arc, autonomous_problem, unit_phi, cube_root_f) -> None:
    envelope = descent_envelope(unit_phi, cube_root_f, autonomous_problem(), first_arc.r)

    np.testing.assert_allclose(envelope, first_arc.r**2 / 2.0, rtol=1e-12)
    assert np.all(1.0 - first_arc.u <= envelope + 1e-10)


def test_descent_envelope_switches_power_for_sum_model(cube_root_f) -> None:
    phi = PhiSpec.sum_of_powers(2.0, 3.0)
    params = ProblemParams(alpha=0.0, gamma=0.0, lambda_=2.0, R=4.0, d=1.0)
    r = np.array([0.5, 1.0, 2.0, 4.0])

    envelope = descent_envelope(phi, cube_root_f, params, r)

    assert np.all(np.diff(envelope) > 0.0)
    assert descent_envelope(phi, cube_root_f, params, 0.0) == 0.0


def test_find_d0_inside_benchmark_radius(autonomous_problem, unit_phi, cube_root_f) -> None:
    level = find_d0(autonomous_problem(R=INSIDE_RADIUS, d=None), unit_phi, cube_root_f)

    assert level.d == pytest.approx(0.9**3, rel=1e-6)
    assert len(level.zeros) == 0
    assert abs(level.boundary_value) <= 1e-8
    assert level.outer_zero == pytest.approx(INSIDE_RADIUS, rel=1e-7)
    assert level.profile.r_end == pytest.approx(INSIDE_RADIUS)
    inside = level.profile.r < INSIDE_RADIUS * (1.0 - 1e-6)
    assert np.all(level.profile.u[inside] > 0.0)


def test_find_d0_with_taller_ceiling() -> None:
    params = ProblemParams(alpha=0.0, gamma=0.0, lambda_=1.0, R=2.0 * AUTONOMOUS_FIRST_ZERO)

    level = find_d0(params, PhiSpec.power(2.0), FSpec.power(1.0 / 3.0, d_infinity=10.0))

    assert level.d == pytest.approx(8.0, rel=1e-6)


def test_find_d0_not_bracketed_when_lambda_too_large(unit_phi, cube_root_f) -> None:
    params = ProblemParams(alpha=0.0, gamma=0.0, lambda_=1.0, R=2.0 * AUTONOMOUS_FIRST_ZERO)

    with pytest.raises(NotBracketedError) as exc_info:
        find_d0(params, unit_phi, cube_root_f)

    assert exc_info.value.code == "NOT_BRACKETED"
    assert exc_info.value.exit_code == 2


def test_find_d_ell_requires_positive_level(autonomous_problem, unit_phi, cube_root_f) -> None:
    with pytest.raises(ValueError):
        find_d_ell(0, 1.0, autonomous_problem(), unit_phi, cube_root_f)


def test_find_d0_reports_unconverged_bisection(autonomous_problem, unit_phi, cube_root_f) -> None:
    search = SearchSettings(maxBisections=3)

    with pytest.raises(NumericError) as exc_info:
        find_d0(autonomous_problem(R=INSIDE_RADIUS, d=None), unit_phi, cube_root_f, search=search)

    err = exc_info.value
    assert err.code == "BISECTION_NOT_CONVERGED"
    assert err.exit_code == 2
    lo, hi = err.details["bracket"]
    assert lo < 0.9**3 < hi
    assert err.details["bisections"] == 3


def test_solve_problem_reports_unconverged_level(autonomous_problem, unit_phi, cube_root_f) -> None:
    with pytest.raises(ShootingError) as exc_info:
        solve_problem(
            autonomous_problem(R=INSIDE_RADIUS, d=None),
            unit_phi,
            cube_root_f,
            1,
            search=SearchSettings(maxBisections=3),
        )

    assert exc_info.value.code == "BISECTION_NOT_CONVERGED"
    assert exc_info.value.level == 0
    assert exc_info.value.partial.levels == []


@pytest.mark.slow
def test_find_d_ell_matches_autonomous_ladder(autonomous_problem, unit_phi, cube_root_f) -> None:
    params = autonomous_problem(R=INSIDE_RADIUS, d=None)
    top = 0.9**3

    first = find_d_ell(1, top, params, unit_phi, cube_root_f)
    second = find_d_ell(2, first.d, params, unit_phi, cube_root_f)

    assert first.d == pytest.approx(top / 27.0, rel=1e-6)
    assert second.d == pytest.approx(top / 125.0, rel=1e-6)
    assert len(first.zeros) == 1
    assert len(second.zeros) == 2
    assert first.zeros.zeros[0] == pytest.approx(INSIDE_RADIUS / 3.0, rel=1e-6)


@pytest.mark.slow
def test_solve_problem_builds_decreasing_ladder(autonomous_problem, unit_phi, cube_root_f) -> None:
    result = solve_problem(autonomous_problem(R=INSIDE_RADIUS, d=None), unit_phi, cube_root_f, 3)

    expected = [0.9**3 * autonomous_level(ell) for ell in range(4)]
    np.testing.assert_allclose(result.d_levels, expected, rtol=1e-4)
    assert result.zero_counts == [0, 1, 2, 3]
    assert all(abs(level.boundary_value) <= 1e-8 for level in result.levels)
    assert all(a > b for a, b in zip(result.d_levels, result.d_levels[1:]))
    assert result.lambda_threshold == pytest.approx(2.0 / INSIDE_RADIUS**2)
    assert result.lambda_used == 1.0


def test_solve_problem_positive_level_only(autonomous_problem, unit_phi, cube_root_f) -> None:
    result = solve_problem(autonomous_problem(R=INSIDE_RADIUS, d=None), unit_phi, cube_root_f, 0)

    assert len(result.levels) == 1
    assert result.d_levels[0] == pytest.approx(0.9**3, rel=1e-6)


def test_solve_problem_rejects_growth_condition(unit_phi, cube_root_f) -> None:
    params = ProblemParams(alpha=1.0, gamma=0.0, lambda_=1.0, R=1.0)

    with pytest.raises(DomainError) as exc_info:
        solve_problem(params, unit_phi, cube_root_f, 1)

    assert exc_info.value.code == "CONDITION_GAMMA_ALPHA"


def test_solve_problem_keeps_completed_levels(monkeypatch, autonomous_problem, unit_phi, cube_root_f) -> None:
    def not_bracketed(ell, previous_d, *args, **kwargs):
        raise NotBracketedError(message="no flip", details={"ell": ell})

    monkeypatch.setattr(shooting, "find_d_ell", not_bracketed)

    with pytest.raises(ShootingError) as exc_info:
        solve_problem(autonomous_problem(R=INSIDE_RADIUS, d=None), unit_phi, cube_root_f, 2)

    err = exc_info.value
    assert err.level == 1
    assert err.code == "NOT_BRACKETED"
    assert err.exit_code == 2
    assert isinstance(err.cause, NotBracketedError)
    assert len(err.partial.levels) == 1
    assert err.partial.d_levels[0] == pytest.approx(0.9**3, rel=1e-6)


def test_search_settings_reject_zero_workers() -> None:
    with pytest.raises(ValueError):
        SearchSettings(workers=0)


def test_scan_result_does_not_depend_on_workers(autonomous_problem, unit_phi, cube_root_f) -> None:
    params = autonomous_problem(R=INSIDE_RADIUS, d=None)

    serial = find_d0(params, unit_phi, cube_root_f, search=SearchSettings(workers=1))
    batched = find_d0(params, unit_phi, cube_root_f, search=SearchSettings(workers=3))

    assert batched.d == serial.d
    assert batched.bisections == serial.bisections


@pytest.mark.parametrize(
    ("p", "delta", "alpha", "gamma"),
    [(2.0, 1.0 / 3.0, 0.0, 0.0), (3.0, 1.0, 2.0, 2.0)],
)
@pytest.mark.parametrize("c", [1.0 / 8.0, 8.0])
def test_first_zero_follows_homogeneity(p: float, delta: float, alpha: float, gamma: float, c: float) -> None:
    phi, f = PhiSpec.power(p), FSpec.power(delta, d_infinity=10.0)
    exponent = (p - 1.0 - delta) / (gamma - alpha + p)

    def first_zero(d: float) -> float:
        params = ProblemParams(alpha=alpha, gamma=gamma, lambda_=1.0, R=1.0, d=d)
        traj = integrate_trajectory(params, phi, f, 100.0, max_zero_count=1)
        return float(zeros_of(traj, 1).zeros[0])

    assert first_zero(c) == pytest.approx(c**exponent * first_zero(1.0), rel=1e-6)


def test_first_zero_depends_continuously_on_height(unit_phi, cube_root_f) -> None:
    def first_zero(d: float) -> float:
        params = ProblemParams(alpha=0.0, gamma=0.0, lambda_=1.0, R=1.0, d=d)
        return integrate_trajectory(params, unit_phi, cube_root_f, 5.0, max_zero_count=1).r_end

    base = first_zero(0.5)
    nearby = first_zero(0.5 * (1.0 + 1e-6))

    assert abs(nearby - base) <= 1e-5 * base
    assert nearby >= base - 1e-9


def test_first_zero_vanishes_with_height(unit_phi, cube_root_f) -> None:
    def first_zero(d: float) -> float:
        params = ProblemParams(alpha=0.0, gamma=0.0, lambda_=1.0, R=1.0, d=d)
        return integrate_trajectory(params, unit_phi, cube_root_f, 5.0, max_zero_count=1).r_end

    zeros = np.array([first_zero(2.0 ** (-k)) for k in range(21)])

    assert np.all(np.diff(zeros) < 0.0)
    # z_1(d) = d^(1/3) z_1(1) for the benchmark, so twenty halvings shrink it by 2^(-20/3)
    assert zeros[-1] == pytest.approx(2.0 ** (-20.0 / 3.0) * AUTONOMOUS_FIRST_ZERO, rel=1e-3)


@pytest.mark.slow
def test_benchmark_ladder_at_oracle_radius(autonomous_problem, unit_phi, cube_root_f) -> None:
    result = solve_problem(autonomous_problem(d=None), unit_phi, cube_root_f, 4)

    np.testing.assert_allclose(result.d_levels, [autonomous_level(ell) for ell in range(5)], rtol=1e-4)
    for level in result.levels:
        assert len(level.zeros) == level.ell
        assert abs(level.boundary_value) <= 1e-8
