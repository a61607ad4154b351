from __future__ import annotations

import hashlib
import json
import math
from datetime import datetime, timezone
from typing import Any, Callable, Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .ivp import ProblemParams, SolverSettings
from .nonlinearity import FSpec
from .phi_model import PhiSpec
from .report_contract import CheckReportV1
from .shooting import SearchSettings

RUN_SCHEMA_VERSION = "v1"

_EXPRESSION_NAMES: dict[str, Any] = {
    "abs": np.abs,
    "sign": np.sign,
    "sqrt": np.sqrt,
    "exp": np.exp,
    "expm1": np.expm1,
    "log": np.log,
    "log1p": np.log1p,
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "arctan": np.arctan,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "tanh": np.tanh,
    "arcsinh": np.arcsinh,
    "power": np.power,
    "maximum": np.maximum,
    "minimum": np.minimum,
    "where": np.where,
    "pi": np.pi,
    "e": np.e,
}


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


def _canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _sha256_hex(value: Any) -> str:
    return hashlib.sha256(_canonical_json(value).encode("utf-8")).hexdigest()


def compile_expression(text: str, *, field: str) -> Callable[[np.ndarray], np.ndarray]:
    """Compile a numpy expression in ``t``; only the names in ``_EXPRESSION_NAMES`` resolve."""
    source = str(text).strip()
    if not source:
        raise ValueError(f"{field} must not be empty.")
    try:
        code = compile(source, f"<{field}>", "eval")
    except SyntaxError as exc:
        raise ValueError(f"{field} is not a valid expression: {exc.msg}") from exc
    unknown = sorted(set(code.co_names) - set(_EXPRESSION_NAMES) - {"t"})
    if unknown:
        raise ValueError(f"{field} uses unsupported names: {', '.join(unknown)}")

    def evaluate(t: np.ndarray) -> np.ndarray:
        return eval(code, {"__builtins__": {}}, {**_EXPRESSION_NAMES, "t": t})  # noqa: S307

    return evaluate


def normalize_expression(value: str | None, field: str) -> str | None:
    if value is None:
        return None
    source = str(value).strip()
    compile_expression(source, field=field)
    return source


class PresetConfigV1(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: Literal["p-laplacian", "k-hessian"]
    N: int = Field(ge=1)
    p: float | None = None
    k: int | None = None

    @model_validator(mode="after")
    def _check_parameters(self) -> "PresetConfigV1":
        if self.name == "p-laplacian":
            if self.p is None or not self.p > 1.0:
                raise ValueError("p-laplacian preset requires p > 1.")
        elif self.k is None or not 1 <= self.k <= self.N:
            raise ValueError("k-hessian preset requires 1 <= k <= N.")
        return self

    def expand(self) -> tuple[dict[str, Any], dict[str, Any]]:
        """Defaults for ``problem`` and ``phi`` implied by the operator."""
        if self.name == "p-laplacian":
            return {"alpha": self.N - 1, "gamma": self.N - 1}, {"family": "power", "p": self.p}
        alpha = self.N - self.k
        return {"alpha": alpha, "gamma": alpha}, {"family": "power", "p": self.k + 1}


class PhiConfigV1(BaseModel):
    model_config = ConfigDict(extra="forbid")

    family: Literal["power", "sum_of_powers", "custom"]
    p: float | None = None
    q: float | None = None
    expression: str | None = None
    derivative: str | None = None
    gamma1: float | None = None
    gamma2: float | None = None
    label: str | None = None

    @field_validator("expression")
    @classmethod
    def _validate_expression(cls, value: str | None) -> str | None:
        return normalize_expression(value, "phi.expression")

    @field_validator("derivative")
    @classmethod
    def _validate_derivative(cls, value: str | None) -> str | None:
        return normalize_expression(value, "phi.derivative")

    @model_validator(mode="after")
    def _check_family(self) -> "PhiConfigV1":
        if self.family == "power" and (self.p is None or not self.p > 1.0):
            raise ValueError("power family requires p > 1.")
        if self.family == "sum_of_powers" and (
            self.p is None or self.q is None or not 1.0 < self.p <= self.q
        ):
            raise ValueError("sum_of_powers family requires 1 < p <= q.")
        if self.family == "custom":
            if self.expression is None:
                raise ValueError("custom family requires expression.")
            if self.gamma1 is None or self.gamma2 is None:
                raise ValueError("custom family requires gamma1 and gamma2.")
        return self

    def to_spec(self) -> PhiSpec:
        try:
            if self.family == "power":
                return PhiSpec.power(self.p)
            if self.family == "sum_of_powers":
                return PhiSpec.sum_of_powers(self.p, self.q)
            return PhiSpec.custom(
                compile_expression(self.expression, field="phi.expression"),
                gamma1=self.gamma1,
                gamma2=self.gamma2,
                phi_prime=(
                    compile_expression(self.derivative, field="phi.derivative") if self.derivative else None
                ),
                label=self.label or self.expression,
            )
        except (ValueError, ValidationError) as exc:
            raise ConfigError(message=f"phi: {exc}", details={"field": "phi"}) from exc


class FConfigV1(BaseModel):
    model_config = ConfigDict(extra="forbid")

    family: Literal["power", "arctan", "custom"]
    delta: float | None = None
    dInfinity: float = Field(default=1.0, gt=0.0)
    expression: str | None = None
    label: str | None = None

    @field_validator("expression")
    @classmethod
    def _validate_expression(cls, value: str | None) -> str | None:
        return normalize_expression(value, "f.expression")

    @model_validator(mode="after")
    def _check_family(self) -> "FConfigV1":
        if self.family == "power" and (self.delta is None or not self.delta > 0.0):
            raise ValueError("power family requires delta > 0.")
        if self.family == "custom" and self.expression is None:
            raise ValueError("custom family requires expression.")
        return self

    def to_spec(self) -> FSpec:
        try:
            if self.family == "power":
                return FSpec.power(self.delta, d_infinity=self.dInfinity)
            if self.family == "arctan":
                return FSpec.arctan(d_infinity=self.dInfinity)
            return FSpec.custom(
                compile_expression(self.expression, field="f.expression"),
                d_infinity=self.dInfinity,
                label=self.label or self.expression,
            )
        except (ValueError, ValidationError) as exc:
            raise ConfigError(message=f"f: {exc}", details={"field": "f"}) from exc


class ProblemConfigV1(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    alpha: float
    gamma: float
    lambda_: float = Field(alias="lambda", gt=0.0)
    R: float = Field(gt=0.0)


class SolverConfigV1(BaseModel):
    model_config = ConfigDict(extra="forbid")

    eps0: float | None = Field(default=None, gt=0.0)
    absTol: float = Field(default=1e-10, gt=0.0)
    relTol: float = Field(default=1e-10, gt=0.0)
    boundaryTol: float = Field(default=1e-8, gt=0.0)
    rTol: float = Field(default=1e-8, gt=0.0)
    maxEll: int = Field(default=3, ge=0)
    deadCoreTol: float = Field(default=1e-13, gt=0.0)
    seed: int = 20240601
    d: float | None = Field(default=None, gt=0.0)
    rMax: float | None = Field(default=None, gt=0.0)
    zeroCount: int = Field(default=5, ge=1)
    workers: int = Field(default=1, ge=1)
    probe: float = Field(default=1.0, gt=0.0)
    samples: int = Field(default=10_000, ge=100)
    simonTrials: int = Field(default=100_000, ge=1)
    simonDims: list[int] = Field(default_factory=lambda: [1, 2, 3])
    strict: bool = False

    @field_validator("simonDims")
    @classmethod
    def _check_dims(cls, value: list[int]) -> list[int]:
        dims = sorted(set(value))
        if not dims or any(dim not in (1, 2, 3) for dim in dims):
            raise ValueError("simonDims entries must be 1, 2 or 3.")
        return dims

    def settings(self) -> SolverSettings:
        return SolverSettings(
            eps0=self.eps0,
            absTol=self.absTol,
            relTol=self.relTol,
            deadCoreTol=self.deadCoreTol,
        )

    def search(self) -> SearchSettings:
        return SearchSettings(rTol=self.rTol, boundaryTol=self.boundaryTol, workers=self.workers)


class OutputConfigV1(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directory: str | None = None
    summaryFormat: Literal["json", "yaml"] = "json"


class RunConfigV1(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schemaVersion: Literal["v1"] = RUN_SCHEMA_VERSION
    preset: PresetConfigV1 | None = None
    phi: PhiConfigV1
    f: FConfigV1
    problem: ProblemConfigV1
    solver: SolverConfigV1 = Field(default_factory=SolverConfigV1)
    output: OutputConfigV1 = Field(default_factory=OutputConfigV1)

    @model_validator(mode="before")
    @classmethod
    def _expand_preset(cls, values: Any) -> Any:
        if not isinstance(values, dict) or not isinstance(values.get("preset"), dict):
            return values
        preset = PresetConfigV1.model_validate(values["preset"])
        problem_defaults, phi_default = preset.expand()
        data = dict(values)
        problem = dict(data.get("problem") or {})
        for key, value in problem_defaults.items():
            problem.setdefault(key, value)
        data["problem"] = problem
        data.setdefault("phi", phi_default)
        return data

    def phi_spec(self) -> PhiSpec:
        return self.phi.to_spec()

    def f_spec(self) -> FSpec:
        return self.f.to_spec()

    def problem_params(self, d: float | None = None) -> ProblemParams:
        return ProblemParams(
            alpha=self.problem.alpha,
            gamma=self.problem.gamma,
            lambda_=self.problem.lambda_,
            R=self.problem.R,
            d=d,
        )

    def resolved(self) -> dict[str, Any]:
        return self.model_dump(mode="json", by_alias=True)

    def checksum(self) -> str:
        return _sha256_hex(self.resolved())


def _line_of(text: str, loc: tuple[Any, ...]) -> int | None:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return None
    if node is None:
        return None
    line = node.start_mark.line + 1
    for part in loc:
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                if key.value == str(part):
                    line = key.start_mark.line + 1
                    node = value
                    break
            else:
                break
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
            line = node.start_mark.line + 1
        else:
            break
    return line


def parse_run_config(text: str, source: str = "<config>") -> RunConfigV1:
    """Parse YAML text into a validated config; errors name the field path and source line."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(
            message=f"{source}: not valid YAML" + (f" (line {line})" if line else ""),
            details={"source": source, "line": line},
        ) from exc
    if not isinstance(data, dict):
        raise ConfigError(message=f"{source}: top level must be a mapping.", details={"source": source})
    try:
        return RunConfigV1.model_validate(data)
    except ValidationError as exc:
        errors = []
        for item in exc.errors():
            path = ".".join(str(part) for part in item["loc"]) or "<root>"
            errors.append({"field": path, "line": _line_of(text, item["loc"]), "message": item["msg"]})
        first = errors[0]
        where = f" (line {first['line']})" if first["line"] else ""
        raise ConfigError(
            message=f"{source}: {first['field']}{where}: {first['message']}",
            details={"source": source, "errors": errors},
        ) from exc


class ErrorBodyV1(BaseModel):
    model_config = ConfigDict(extra="forbid")

    code: str
    message: str
    details: dict[str, Any] | None = None


class TrajectorySummaryV1(BaseModel):
    model_config = ConfigDict(extra="forbid")

    d: float
    status: str
    rEnd: float
    nodes: int
    zeros: list[float] = Field(default_factory=list)
    slopes: list[float] = Field(default_factory=list)
    extrema: list[float] = Field(default_factory=list)
    zerosComplete: bool | None = None
    residual: float | None = None
    picardEps: float | None = None
    picardContraction: float | None = None
    picardIterations: int | None = None
    message: str | None = None
    file: str | None = None


class LevelSummaryV1(BaseModel):
    model_config = ConfigDict(extra="forbid")

    ell: int
    d: float
    zeros: list[float]
    slopes: list[float]
    extrema: list[float]
    outerZero: float | None = None
    boundaryValue: float
    bisections: int
    residual: float
    energyViolation: float
    file: str


class RunSummaryV1(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schemaVersion: Literal["v1"] = RUN_SCHEMA_VERSION
    toolVersion: str
    command: str
    status: Literal["ok", "partial", "failed"] = "ok"
    exitCode: int = 0
    generatedAt: datetime | None = None
    configChecksum: str
    config: dict[str, Any]
    lambdaThreshold: float | None = None
    lambdaUsed: float | None = None
    levels: list[LevelSummaryV1] = Field(default_factory=list)
    trajectory: TrajectorySummaryV1 | None = None
    reports: list[CheckReportV1] = Field(default_factory=list)
    files: list[str] = Field(default_factory=list)
    error: ErrorBodyV1 | None = None

    @field_validator("lambdaThreshold", "lambdaUsed")
    @classmethod
    def _finite(cls, value: float | None) -> float | None:
        if value is not None and not math.isfinite(value):
            return None
        return value
