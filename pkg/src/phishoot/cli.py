from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from pydantic import ValidationError

from . import __version__
from .artifacts import ensure_output_dir, profile_filename, write_outputs
from .diagnostics import check_bounds_suite, check_simon, diagnose_trajectory, energy_profile
from .errors import EXIT_DOMAIN, EXIT_NUMERIC, EXIT_OK, ConfigError, DomainError, PhiShootError, ShootingError
from .ivp import ProblemParams, Trajectory, integral_residual, integrate_trajectory, validate_problem
from .nonlinearity import FSpec, validate_f
from .phi_model import PhiSpec, validate_phi
from .report_contract import CheckReportV1
from .run_contract import (
    ErrorBodyV1,
    LevelSummaryV1,
    RunConfigV1,
    RunSummaryV1,
    TrajectorySummaryV1,
    parse_run_config,
    utcnow,
)
from .shooting import LevelResult, lambda_threshold, solve_problem, zeros_of

logger = logging.getLogger(__name__)

ENV_OUTPUT_DIR = "PHISHOOT_OUTPUT_DIR"
ENV_LOG_LEVEL = "PHISHOOT_LOG_LEVEL"
ENV_WORKERS = "PHISHOOT_WORKERS"
DEFAULT_OUTPUT_DIR = "phishoot-output"
ZEROS_RADIUS_FACTOR = 100.0

CHECK_TITLES = {
    "phi1-vanishing-at-zero": "(φ₁)",
    "phi1-unbounded-at-infinity": "(φ₁)",
    "phi2-strictly-increasing": "(φ₂)",
    "phi3-growth-bounds": "(φ₃)",
    "f1-sign": "(f₁)",
    "f2-nondecreasing": "(f₂)",
    "f3-integrability": "(f₃')",
    "condition-gamma-alpha": "(γ,α)",
}

_SOLVER_FLAGS = {
    "eps0": "eps0",
    "abs_tol": "absTol",
    "rel_tol": "relTol",
    "boundary_tol": "boundaryTol",
    "max_ell": "maxEll",
    "dead_core_tol": "deadCoreTol",
    "seed": "seed",
    "d": "d",
    "r_max": "rMax",
    "zero_count": "zeroCount",
    "workers": "workers",
}


@dataclass(frozen=True)
class RuntimeSettings:
    output_dir: str | None = None
    log_level: str = "WARNING"
    workers: int | None = None

    @classmethod
    def from_env(cls) -> "RuntimeSettings":
        raw_workers = os.getenv(ENV_WORKERS)
        workers = None
        if raw_workers is not None and raw_workers.strip():
            try:
                workers = int(raw_workers)
            except ValueError as exc:
                raise ConfigError(message=f"{ENV_WORKERS} must be an integer, got {raw_workers!r}.") from exc
            if workers < 1:
                raise ConfigError(message=f"{ENV_WORKERS} must be >= 1.")
        return cls(
            output_dir=os.getenv(ENV_OUTPUT_DIR) or None,
            log_level=os.getenv(ENV_LOG_LEVEL, "WARNING").strip().upper() or "WARNING",
            workers=workers,
        )


@dataclass
class Outcome:
    exit_code: int = EXIT_OK
    lines: list[str] = field(default_factory=list)
    profiles: dict[str, np.ndarray] = field(default_factory=dict)
    levels: list[LevelSummaryV1] = field(default_factory=list)
    trajectory: TrajectorySummaryV1 | None = None
    reports: list[CheckReportV1] = field(default_factory=list)
    lambda_threshold: float | None = None
    lambda_used: float | None = None
    error: ErrorBodyV1 | None = None

    def fail(self, exc: PhiShootError) -> "Outcome":
        self.exit_code = exc.exit_code
        self.error = ErrorBodyV1(code=exc.code, message=exc.message, details=_plain(exc.details))
        return self


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise ConfigError(message=message)


def _plain(details: dict | None) -> dict | None:
    if details is None:
        return None
    return {key: (value.tolist() if isinstance(value, np.ndarray) else value) for key, value in details.items()}


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="phishoot",
        description="Shooting solver for radial phi-Laplacian boundary value problems.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)
    helps = {
        "validate": "check the structural conditions on phi, f and the coefficients",
        "solve-ivp": "integrate the initial value problem from height solver.d",
        "zeros": "list the first solver.zeroCount zeros from height solver.d",
        "lambda-threshold": "print the admissible lambda threshold",
        "shoot": "compute the nodal ladder d_0 > d_1 > ... > d_maxEll",
        "diagnose": "run the inequality suites, and trajectory checks when solver.d is set",
    }
    for name, text in helps.items():
        sub = commands.add_parser(name, help=text, description=text)
        sub.add_argument("--config", help="YAML run configuration")
        sub.add_argument("--output-dir", help=f"artifact directory (default ${ENV_OUTPUT_DIR} or ./{DEFAULT_OUTPUT_DIR})")
        sub.add_argument("--deterministic", action="store_true", help="omit the timestamp from the summary")
        sub.add_argument("--verbose", action="store_true", help="log at INFO level")
        sub.add_argument("--eps0", type=float)
        sub.add_argument("--abs-tol", type=float)
        sub.add_argument("--rel-tol", type=float)
        sub.add_argument("--boundary-tol", type=float)
        sub.add_argument("--max-ell", type=int)
        sub.add_argument("--dead-core-tol", type=float)
        sub.add_argument("--seed", type=int)
        sub.add_argument("--d", type=float)
        sub.add_argument("--r-max", type=float)
        sub.add_argument("--zero-count", type=int)
        sub.add_argument("--workers", type=int)
    return parser


def configure_logging(runtime: RuntimeSettings, *, verbose: bool) -> None:
    level = logging.INFO if verbose else getattr(logging, runtime.log_level, logging.WARNING)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.getLogger("phishoot").setLevel(level)


def load_config(args: argparse.Namespace, runtime: RuntimeSettings) -> RunConfigV1:
    if not args.config:
        raise ConfigError(message="--config: a configuration file is required.", details={"field": "--config"})
    path = Path(args.config)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(message=f"--config: cannot read {path}: {exc.strerror}", details={"path": str(path)}) from exc
    config = parse_run_config(text, source=str(path))

    overrides = {
        field_name: getattr(args, flag)
        for flag, field_name in _SOLVER_FLAGS.items()
        if getattr(args, flag) is not None
    }
    if runtime.workers is not None and "workers" not in overrides and "workers" not in config.solver.model_fields_set:
        overrides["workers"] = runtime.workers
    if not overrides:
        return config
    data = config.resolved()
    data["solver"].update(overrides)
    try:
        return RunConfigV1.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        path_text = ".".join(str(part) for part in first["loc"])
        raise ConfigError(message=f"{path_text}: {first['msg']}", details={"field": path_text}) from exc


def resolve_output_dir(args: argparse.Namespace, config: RunConfigV1, runtime: RuntimeSettings) -> Path:
    return Path(args.output_dir or config.output.directory or runtime.output_dir or DEFAULT_OUTPUT_DIR)


def _require_admissible(params: ProblemParams, phi: PhiSpec, f: FSpec) -> None:
    report = validate_problem(params, phi, f)
    failures = report.failures()
    if failures:
        check = failures[0]
        raise DomainError(
            code=check.name.upper().replace("-", "_"),
            message=f"{CHECK_TITLES.get(check.name, check.name)} violated: {check.detail}",
        )
    threshold = report.checks[-1]
    if threshold.name == "lambda-below-threshold" and threshold.verdict == "warn":
        logger.warning("%s", threshold.detail)


def _require_height(config: RunConfigV1, command: str) -> float:
    if config.solver.d is None:
        raise ConfigError(
            message=f"solver.d: required for {command} (set it in the config or pass --d).",
            details={"field": "solver.d"},
        )
    return config.solver.d


def _profile_table(traj: Trajectory, params: ProblemParams, phi: PhiSpec, f: FSpec) -> np.ndarray:
    energy = energy_profile(traj, params, phi, f)
    return np.vstack([traj.r, traj.u, traj.du, traj.v, energy.E])


def _report_lines(report: CheckReportV1) -> list[str]:
    lines = [f"{report.subject}: {report.verdict}"]
    for check in report.checks:
        if check.verdict == "pass":
            continue
        title = CHECK_TITLES.get(check.name, check.name)
        word = "violated" if check.verdict == "fail" else check.verdict
        lines.append(f"  {title} {word}: {check.detail}")
    return lines


def _trajectory_summary(
    traj: Trajectory,
    params: ProblemParams,
    phi: PhiSpec,
    f: FSpec,
    count: int,
    *,
    file: str | None,
) -> TrajectorySummaryV1:
    zeros = zeros_of(traj, count)
    return TrajectorySummaryV1(
        d=traj.d,
        status=traj.status,
        rEnd=traj.r_end,
        nodes=int(traj.r.size),
        zeros=zeros.zeros.tolist(),
        slopes=zeros.slopes.tolist(),
        extrema=zeros.extrema.tolist(),
        zerosComplete=zeros.complete,
        residual=integral_residual(traj, params, phi, f),
        picardEps=traj.picard.eps if traj.picard else None,
        picardContraction=traj.picard.contraction if traj.picard else None,
        picardIterations=traj.picard.iterations if traj.picard else None,
        message=traj.message,
        file=file,
    )


def _level_summary(level: LevelResult, params: ProblemParams, phi: PhiSpec, f: FSpec) -> LevelSummaryV1:
    traj_params = params.with_d(level.d)
    return LevelSummaryV1(
        ell=level.ell,
        d=level.d,
        zeros=level.zeros.zeros.tolist(),
        slopes=level.zeros.slopes.tolist(),
        extrema=level.zeros.extrema.tolist(),
        outerZero=level.outer_zero,
        boundaryValue=level.boundary_value,
        bisections=level.bisections,
        residual=integral_residual(level.profile, traj_params, phi, f),
        energyViolation=energy_profile(level.profile, traj_params, phi, f).monotone_violation,
        file=profile_filename(level.ell),
    )


def _step_failure(traj: Trajectory, outcome: Outcome) -> Outcome:
    if traj.status == "step_failure":
        outcome.exit_code = EXIT_NUMERIC
        outcome.error = ErrorBodyV1(
            code="STEP_FAILURE",
            message=f"Integration stopped at r={traj.r_end:.10g}: {traj.message}",
            details={"r": traj.r_end},
        )
    return outcome


def command_validate(config: RunConfigV1) -> Outcome:
    phi = config.phi_spec()
    f = config.f_spec()
    params = config.problem_params(d=config.solver.d)
    reports = [
        validate_phi(phi, samples=config.solver.samples, strict=config.solver.strict),
        validate_f(f, phi.gamma1, config.solver.probe),
        validate_problem(params, phi, f),
    ]
    outcome = Outcome(reports=reports, lambda_used=params.lambda_)
    for report in reports:
        outcome.lines.extend(_report_lines(report))
    if any(report.verdict == "fail" for report in reports):
        outcome.exit_code = EXIT_DOMAIN
    return outcome


def command_solve_ivp(config: RunConfigV1) -> Outcome:
    phi, f = config.phi_spec(), config.f_spec()
    params = config.problem_params(d=_require_height(config, "solve-ivp"))
    _require_admissible(params, phi, f)
    r_max = config.solver.rMax or params.R
    traj = integrate_trajectory(params, phi, f, r_max, settings=config.solver.settings())
    name = profile_filename(None)
    summary = _trajectory_summary(traj, params, phi, f, config.solver.zeroCount, file=name)
    outcome = Outcome(
        profiles={name: _profile_table(traj, params, phi, f)},
        trajectory=summary,
        lambda_used=params.lambda_,
        lines=[f"status {traj.status} at r={traj.r_end!r}", *(f"zero {z!r}" for z in summary.zeros)],
    )
    return _step_failure(traj, outcome)


def command_zeros(config: RunConfigV1) -> Outcome:
    phi, f = config.phi_spec(), config.f_spec()
    params = config.problem_params(d=_require_height(config, "zeros"))
    _require_admissible(params, phi, f)
    count = config.solver.zeroCount
    r_max = config.solver.rMax or ZEROS_RADIUS_FACTOR * params.R
    traj = integrate_trajectory(params, phi, f, r_max, max_zero_count=count, settings=config.solver.settings())
    summary = _trajectory_summary(traj, params, phi, f, count, file=None)
    outcome = Outcome(trajectory=summary, lambda_used=params.lambda_, lines=[repr(z) for z in summary.zeros])
    if not summary.zerosComplete:
        outcome.lines.append(f"# found {len(summary.zeros)} of {count} zeros before r={traj.r_end!r} ({traj.status})")
    return _step_failure(traj, outcome)


def command_lambda_threshold(config: RunConfigV1) -> Outcome:
    phi, f = config.phi_spec(), config.f_spec()
    params = config.problem_params()
    _require_admissible(params, phi, f)
    value = lambda_threshold(phi, f, params.alpha, params.gamma, params.R, f.dInfinity)
    return Outcome(lambda_threshold=value, lambda_used=params.lambda_, lines=[repr(value)])


def command_shoot(config: RunConfigV1) -> Outcome:
    phi, f = config.phi_spec(), config.f_spec()
    params = config.problem_params()
    _require_admissible(params, phi, f)
    outcome = Outcome(lambda_used=params.lambda_)
    try:
        result = solve_problem(
            params,
            phi,
            f,
            config.solver.maxEll,
            solver=config.solver.settings(),
            search=config.solver.search(),
        )
    except ShootingError as exc:
        result = exc.partial
        outcome.fail(exc)
    outcome.lambda_threshold = result.lambda_threshold
    for level in result.levels:
        outcome.levels.append(_level_summary(level, params, phi, f))
        outcome.profiles[profile_filename(level.ell)] = _profile_table(
            level.profile, params.with_d(level.d), phi, f
        )
        outcome.lines.append(f"d_{level.ell} = {level.d!r}")
    return outcome


def command_diagnose(config: RunConfigV1) -> Outcome:
    phi, f = config.phi_spec(), config.f_spec()
    solver = config.solver
    reports = [check_bounds_suite(phi, samples=solver.samples)]
    reports.extend(check_simon(phi, dim, trials=solver.simonTrials, seed=solver.seed) for dim in solver.simonDims)
    outcome = Outcome(reports=reports, lambda_used=config.problem.lambda_)
    if solver.d is not None:
        params = config.problem_params(d=solver.d)
        _require_admissible(params, phi, f)
        traj = integrate_trajectory(
            params,
            phi,
            f,
            solver.rMax or params.R,
            max_zero_count=solver.zeroCount,
            settings=solver.settings(),
        )
        name = profile_filename(None)
        outcome.trajectory = _trajectory_summary(traj, params, phi, f, solver.zeroCount, file=name)
        outcome.profiles[name] = _profile_table(traj, params, phi, f)
        reports.append(diagnose_trajectory(traj, params, phi, f))
        _step_failure(traj, outcome)
    for report in reports:
        outcome.lines.extend(_report_lines(report))
    if outcome.exit_code == EXIT_OK and any(report.verdict == "fail" for report in reports):
        outcome.exit_code = EXIT_DOMAIN
    return outcome


COMMANDS: dict[str, Callable[[RunConfigV1], Outcome]] = {
    "validate": command_validate,
    "solve-ivp": command_solve_ivp,
    "zeros": command_zeros,
    "lambda-threshold": command_lambda_threshold,
    "shoot": command_shoot,
    "diagnose": command_diagnose,
}


def _print_error(exc: PhiShootError) -> None:
    print(f"error [{exc.code}]: {exc.message}", file=sys.stderr)


def run_command(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand; returns 0 on success, 1 on domain or config failure, 2 on numeric failure."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        runtime = RuntimeSettings.from_env()
    except SystemExit as exc:
        return int(exc.code or 0)
    except PhiShootError as exc:
        _print_error(exc)
        return exc.exit_code
    configure_logging(runtime, verbose=args.verbose)

    try:
        config = load_config(args, runtime)
        directory = ensure_output_dir(resolve_output_dir(args, config, runtime))
    except PhiShootError as exc:
        _print_error(exc)
        return exc.exit_code

    try:
        outcome = COMMANDS[args.command](config)
    except PhiShootError as exc:
        logger.debug("%s failed", args.command, exc_info=True)
        outcome = Outcome().fail(exc)

    if outcome.exit_code == EXIT_OK:
        status = "ok"
    elif outcome.levels or outcome.profiles:
        status = "partial"
    else:
        status = "failed"
    summary = RunSummaryV1(
        toolVersion=__version__,
        command=args.command,
        status=status,
        exitCode=outcome.exit_code,
        generatedAt=None if args.deterministic else utcnow(),
        configChecksum=config.checksum(),
        config=config.resolved(),
        lambdaThreshold=outcome.lambda_threshold,
        lambdaUsed=outcome.lambda_used,
        levels=outcome.levels,
        trajectory=outcome.trajectory,
        reports=outcome.reports,
        error=outcome.error,
    )
    try:
        write_outputs(directory, summary, outcome.profiles, summary_format=config.output.summaryFormat)
    except OSError as exc:
        print(f"error [OUTPUT_NOT_WRITABLE]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    for line in outcome.lines:
        print(line)
    if outcome.error is not None:
        print(f"error [{outcome.error.code}]: {outcome.error.message}", file=sys.stderr)
    return outcome.exit_code
