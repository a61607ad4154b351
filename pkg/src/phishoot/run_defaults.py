from __future__ import annotations

import math

from scipy import special

from .run_contract import RunConfigV1

# First zero of u'' = -|u|^(-2/3) u, u(0) = 1, u'(0) = 0:
# z_1 = int_0^1 ds / sqrt(2 (F(1) - F(s))) with F(s) = 3/4 |s|^(4/3).
AUTONOMOUS_FIRST_ZERO = (1.0 / math.sqrt(1.5)) * 0.75 * float(special.beta(0.75, 0.5))


def autonomous_zero(ell: int, d: float = 1.0) -> float:
    """``z_ell(d) = (2 ell - 1) d^(1/3) z_1(1)`` for the autonomous benchmark."""
    return (2 * ell - 1) * d ** (1.0 / 3.0) * AUTONOMOUS_FIRST_ZERO


def autonomous_level(ell: int) -> float:
    """``d_ell = (2 ell + 1)^-3`` when ``R = z_1(1)`` and ``d_infinity = 1``."""
    return float((2 * ell + 1) ** -3)


def default_run_config(*, R: float | None = None, max_ell: int = 3) -> RunConfigV1:
    """Autonomous benchmark: ``alpha = gamma = 0``, ``phi = 1``, ``f(t) = |t|^(-2/3) t``, ``lambda = 1``."""
    return RunConfigV1.model_validate(
        {
            "phi": {"family": "power", "p": 2.0},
            "f": {"family": "power", "delta": 1.0 / 3.0, "dInfinity": 1.0},
            "problem": {
                "alpha": 0.0,
                "gamma": 0.0,
                "lambda": 1.0,
                "R": AUTONOMOUS_FIRST_ZERO if R is None else R,
            },
            "solver": {"maxEll": max_ell},
        }
    )


def preset_run_config(name: str, *, N: int, R: float, p: float | None = None, k: int | None = None) -> RunConfigV1:
    preset: dict[str, object] = {"name": name, "N": N}
    if p is not None:
        preset["p"] = p
    if k is not None:
        preset["k"] = k
    return RunConfigV1.model_validate(
        {
            "preset": preset,
            "f": {"family": "power", "delta": 1.0 / 3.0, "dInfinity": 1.0},
            "problem": {"lambda": 1.0, "R": R},
        }
    )
