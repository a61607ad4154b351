from __future__ import annotations

from pathlib import Path
from typing import Any, Callable

import pytest
import yaml

from phishoot.ivp import ProblemParams, Trajectory, integrate_trajectory
from phishoot.nonlinearity import FSpec
from phishoot.phi_model import PhiSpec
from phishoot.run_defaults import AUTONOMOUS_FIRST_ZERO, default_run_config


def _autonomous_problem(*, d: float | None = 1.0, R: float = AUTONOMOUS_FIRST_ZERO, lam: float = 1.0) -> ProblemParams:
    return ProblemParams(alpha=0.0, gamma=0.0, lambda_=lam, R=R, d=d)


@pytest.fixture()
def autonomous_problem() -> Callable[..., ProblemParams]:
    """Factory for the benchmark coefficients alpha = gamma = 0, lambda = 1, R = z_1(1)."""
    return _autonomous_problem


@pytest.fixture()
def unit_phi() -> PhiSpec:
    return PhiSpec.power(2.0)


@pytest.fixture()
def cube_root_f() -> FSpec:
    return FSpec.power(1.0 / 3.0)


@pytest.fixture(scope="session")
def autonomous_trajectory() -> Trajectory:
    """Benchmark solution from d = 1 followed through its first five zeros."""
    return integrate_trajectory(
        _autonomous_problem(),
        PhiSpec.power(2.0),
        FSpec.power(1.0 / 3.0),
        12.0 * AUTONOMOUS_FIRST_ZERO,
        max_zero_count=5,
    )


@pytest.fixture(scope="session")
def first_arc() -> Trajectory:
    return integrate_trajectory(
        _autonomous_problem(),
        PhiSpec.power(2.0),
        FSpec.power(1.0 / 3.0),
        AUTONOMOUS_FIRST_ZERO,
    )


@pytest.fixture()
def benchmark_config() -> dict[str, Any]:
    return default_run_config().resolved()


@pytest.fixture()
def write_config(tmp_path) -> Callable[[dict[str, Any]], Path]:
    def _write(data: dict[str, Any], name: str = "run.yaml") -> Path:
        path = tmp_path / name
        path.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")
        return path

    return _write
