from __future__ import annotations

import math
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, computed_field

REPORT_SCHEMA_VERSION = "v1"

Verdict = Literal["pass", "fail", "warn", "inconclusive"]


class ConditionCheckV1(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    verdict: Verdict
    margin: float | None = None
    samples: int = Field(default=0, ge=0)
    violations: int = Field(default=0, ge=0)
    firstViolationAt: float | None = None
    detail: str | None = None

    @property
    def passed(self) -> bool:
        return self.verdict in ("pass", "warn")


class CheckReportV1(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schemaVersion: Literal["v1"] = REPORT_SCHEMA_VERSION
    subject: str
    checks: list[ConditionCheckV1] = Field(default_factory=list)
    tightRange: tuple[float, float] | None = None
    seed: int | None = None

    @computed_field  # type: ignore[prop-decorator]
    @property
    def verdict(self) -> Verdict:
        verdicts = {check.verdict for check in self.checks}
        if "fail" in verdicts:
            return "fail"
        if "inconclusive" in verdicts:
            return "inconclusive"
        return "pass"

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def check(self, name: str) -> ConditionCheckV1:
        for item in self.checks:
            if item.name == name:
                return item
        raise KeyError(name)

    def failures(self) -> list[ConditionCheckV1]:
        return [item for item in self.checks if not item.passed]


def summarize_margins(
    name: str,
    margins: np.ndarray,
    at: np.ndarray,
    *,
    detail: str | None = None,
) -> ConditionCheckV1:
    """Fold per-sample slacks (``>= 0`` means satisfied) into one check entry.

    Non-finite slacks count as violations; they mark evaluator failures at that sample.
    """
    margins = np.asarray(margins, dtype=float)
    at = np.asarray(at, dtype=float)
    bad = ~np.isfinite(margins) | (margins < 0.0)
    violations = int(np.count_nonzero(bad))
    finite = margins[np.isfinite(margins)]
    worst = float(finite.min()) if finite.size else None
    first = float(at[np.argmax(bad)]) if violations else None
    if worst is not None and math.isinf(worst):
        worst = None
    return ConditionCheckV1(
        name=name,
        verdict="fail" if violations else "pass",
        margin=worst,
        samples=int(margins.size),
        violations=violations,
        firstViolationAt=first,
        detail=detail,
    )
