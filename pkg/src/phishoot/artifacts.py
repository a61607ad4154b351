"""CSV profiles and the summary document of a run."""

from __future__ import annotations

import json
import logging
import tempfile
from pathlib import Path

import numpy as np
import yaml

from .errors import NumericError
from .run_contract import RunSummaryV1

logger = logging.getLogger(__name__)

CSV_HEADER = "r,u,du,v,E"


def ensure_output_dir(directory: Path) -> Path:
    """Create ``directory`` and prove it is writable before any computation starts."""
    try:
        directory.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=directory, prefix=".phishoot-", delete=True):
            pass
    except OSError as exc:
        raise NumericError(
            code="OUTPUT_NOT_WRITABLE",
            message=f"Output directory {directory} is not writable: {exc}",
            details={"directory": str(directory)},
        ) from exc
    return directory


def profile_filename(ell: int | None) -> str:
    return "profile_ivp.csv" if ell is None else f"profile_ell{ell}.csv"


def write_profile_csv(path: Path, columns: np.ndarray) -> Path:
    """Write rows ``r, u, du, v, E`` with 17 significant digits and one header row."""
    table = np.asarray(columns, dtype=float)
    if table.ndim != 2 or table.shape[0] != 5:
        raise ValueError("profile table must have the five rows r, u, du, v, E.")
    np.savetxt(path, table.T, delimiter=",", fmt="%.17g", header=CSV_HEADER, comments="")
    return path


def summary_text(summary: RunSummaryV1, summary_format: str) -> str:
    payload = summary.model_dump(mode="json", by_alias=True, exclude_none=True)
    if summary_format == "yaml":
        return yaml.safe_dump(payload, sort_keys=True, allow_unicode=True)
    return json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_outputs(
    directory: Path,
    summary: RunSummaryV1,
    profiles: dict[str, np.ndarray],
    *,
    summary_format: str = "json",
) -> list[Path]:
    """Write every profile CSV (in the given order), then ``summary.<ext>`` listing them."""
    written: list[Path] = []
    for name, table in profiles.items():
        written.append(write_profile_csv(directory / name, table))
    summary = summary.model_copy(update={"files": [path.name for path in written]})
    target = directory / f"summary.{summary_format}"
    target.write_text(summary_text(summary, summary_format), encoding="utf-8")
    written.append(target)
    logger.info("wrote %d artifacts to %s", len(written), directory)
    return written
