"""CSV ingestion and export of datasets, and JSON / CSV report serialization."""

import json
import logging
import re
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np
import pandas as pd

import settings
from src.dataset import EnvironmentData, FitResult, MultiEnvDataset, validate_dataset
from src.errors import ParseError, ReportIOError, SchemaError, ValidationError
from src.utils import column_means

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def read_table(path: PathLike) -> pd.DataFrame:
    """Read a CSV file with every cell kept as its raw string."""
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            header = f.readline()
    except OSError as e:
        logger.error(f"Failed to open {path}: {e}")
        raise ReportIOError(f"Failed to open {path}: {e}") from e

    names = [name.strip() for name in header.rstrip("\r\n").split(",")]
    if not header.strip():
        raise ParseError(f"{path} has no header row", row=1)
    duplicates = sorted({name for name in names if names.count(name) > 1})
    if duplicates:
        raise ParseError(f"{path} has duplicate columns {duplicates}", row=1)

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.ParserError as e:
        raise ParseError(f"Malformed CSV in {path}: {e}") from e
    except pd.errors.EmptyDataError as e:
        raise ParseError(f"{path} is empty: {e}", row=1) from e
    frame.columns = [str(c).strip() for c in frame.columns]
    logger.debug(f"Read {len(frame)} rows with columns {list(frame.columns)} from {path}")
    return frame


def covariate_columns(
    frame: pd.DataFrame, prefix: str = settings.CSV_COVARIATE_PREFIX
) -> list[str]:
    """Covariate columns x1..xp in index order; every index up to p must exist."""
    pattern = re.compile(rf"^{re.escape(prefix)}(\d+)$")
    indices = sorted(
        int(match.group(1))
        for match in (pattern.match(str(c)) for c in frame.columns)
        if match
    )
    if not indices:
        raise SchemaError(f"No covariate columns named {prefix}1..{prefix}p")
    p = indices[-1]
    missing = [f"{prefix}{j}" for j in range(1, p + 1) if j not in indices]
    if missing:
        raise SchemaError(f"Missing covariate column(s) {missing}", column=missing[0])
    return [f"{prefix}{j}" for j in range(1, p + 1)]


def require_columns(frame: pd.DataFrame, columns: Sequence[str]) -> None:
    for column in columns:
        if column not in frame.columns:
            raise SchemaError(f"Required column '{column}' is missing", column=column)


def parse_numeric(
    frame: pd.DataFrame, column: str, allow_empty: bool = False
) -> np.ndarray:
    """
    Parse one column to floats; empty cells become NaN when allowed.

    Row numbers in errors are file line numbers (the header is line 1).
    """
    raw = frame[column].astype(str).str.strip()
    values = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=float)
    empty = (raw == "").to_numpy()
    for position in np.flatnonzero(~np.isfinite(values)):
        if empty[position]:
            if allow_empty:
                continue
            raise ParseError("Empty cell", row=int(position) + 2, column=column)
        raise ParseError(
            f"Cannot parse '{raw.iloc[position]}' as a finite number",
            row=int(position) + 2,
            column=column,
        )
    return values


def _environment_weight(weights: np.ndarray, env_id: str, column: str) -> Optional[float]:
    present = weights[np.isfinite(weights)]
    if present.size == 0:
        return None
    if np.any(present != present[0]):
        raise ParseError(f"Environment '{env_id}' has more than one weight", column=column)
    return float(present[0])


def dataset_from_frame(
    frame: pd.DataFrame,
    env_column: str = settings.CSV_ENV_COLUMN,
    outcome_column: str = settings.CSV_OUTCOME_COLUMN,
    weight_column: str = settings.CSV_WEIGHT_COLUMN,
    prefix: str = settings.CSV_COVARIATE_PREFIX,
    label_mask: Optional[np.ndarray] = None,
) -> MultiEnvDataset:
    """
    Group rows into environments by ``env_column``, in order of first appearance.

    Empty outcome cells become unlabeled rows. ``label_mask`` can hide further
    outcomes (rows where it is False are treated as unlabeled).
    """
    require_columns(frame, [env_column, outcome_column])
    columns = covariate_columns(frame, prefix)
    covariates = np.column_stack([parse_numeric(frame, c) for c in columns])
    outcomes = parse_numeric(frame, outcome_column, allow_empty=True)
    observed = np.isfinite(outcomes)
    if label_mask is not None:
        observed = observed & np.asarray(label_mask, dtype=bool)
    if weight_column in frame.columns:
        weights = parse_numeric(frame, weight_column, allow_empty=True)
    else:
        weights = np.full(len(frame), np.nan)

    env_values = frame[env_column].astype(str).str.strip().to_numpy()
    if np.any(env_values == ""):
        row = int(np.flatnonzero(env_values == "")[0]) + 2
        raise ParseError("Empty environment id", row=row, column=env_column)

    environments = []
    for env_id in pd.unique(env_values):
        rows = np.flatnonzero(env_values == env_id)
        environments.append(
            EnvironmentData.from_outcomes(
                env_id=env_id,
                covariates=covariates[rows],
                outcomes=np.where(observed[rows], outcomes[rows], 0.0),
                label_mask=observed[rows],
                weight=_environment_weight(weights[rows], env_id, weight_column),
            )
        )
    return MultiEnvDataset.from_environments(environments, p=len(columns))


def load_csv(
    path: PathLike,
    env_column: str = settings.CSV_ENV_COLUMN,
    outcome_column: str = settings.CSV_OUTCOME_COLUMN,
    weight_column: str = settings.CSV_WEIGHT_COLUMN,
    prefix: str = settings.CSV_COVARIATE_PREFIX,
) -> MultiEnvDataset:
    """Load and validate a multi-environment dataset from CSV."""
    frame = read_table(path)
    data = dataset_from_frame(frame, env_column, outcome_column, weight_column, prefix)
    data = validate_dataset(data)
    logger.info(
        f"Loaded {path}: {len(data)} environment(s), p={data.p}, "
        f"rows={[env.N for env in data]}, labeled={[env.n for env in data]}"
    )
    return data


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        if not np.isfinite(value):
            return ""
        return repr(float(value))
    if isinstance(value, (list, tuple)):
        return ";".join(_format_value(v) for v in value)
    return str(value)


def _csv_text(header: list[str], rows: list[list[str]]) -> str:
    frame = pd.DataFrame(rows, columns=header, dtype=str)
    return frame.to_csv(index=False, lineterminator="\n")


def _write_text(path: PathLike, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as e:
        logger.error(f"Failed to write {path}: {e}")
        raise ReportIOError(f"Failed to write {path}: {e}") from e


def dataset_csv_text(data: MultiEnvDataset) -> str:
    """A dataset in the ``load_csv`` layout; unlabeled outcomes are empty cells."""
    with_weights = any(env.weight is not None for env in data.environments)
    header = [settings.CSV_ENV_COLUMN, settings.CSV_OUTCOME_COLUMN]
    if with_weights:
        header.append(settings.CSV_WEIGHT_COLUMN)
    header += [f"{settings.CSV_COVARIATE_PREFIX}{j}" for j in range(1, data.p + 1)]

    rows = []
    for env in data.environments:
        label_index = np.cumsum(env.label_mask) - 1
        for i in range(env.N):
            y = env.labels[label_index[i]] if env.label_mask[i] else None
            row = [env.env_id, _format_value(y)]
            if with_weights:
                row.append(_format_value(env.weight))
            row += [_format_value(v) for v in env.covariates[i]]
            rows.append(row)
    return _csv_text(header, rows)


def write_dataset_csv(data: MultiEnvDataset, path: PathLike) -> None:
    _write_text(path, dataset_csv_text(data))
    logger.info(f"Wrote {sum(env.N for env in data.environments)} rows to {path}")


def center_dataset(data: MultiEnvDataset) -> MultiEnvDataset:
    """Subtract each environment's covariate means (over all N rows)."""
    environments = [
        EnvironmentData(
            env_id=env.env_id,
            covariates=env.covariates - column_means(env.covariates),
            labels=env.labels,
            label_mask=env.label_mask,
            weight=env.weight,
        )
        for env in data.environments
    ]
    return data.replace_environments(environments)


def report_dict(report: Any) -> dict:
    """JSON-ready dict of a report, fit result, list of fits or loaded report."""
    if isinstance(report, dict):
        return report
    if isinstance(report, FitResult):
        return {"schema": settings.REPORT_SCHEMA, "kind": "fit", **report.to_dict()}
    if isinstance(report, (list, tuple)) and all(isinstance(r, FitResult) for r in report):
        return {
            "schema": settings.REPORT_SCHEMA,
            "kind": "fits",
            "fits": [r.to_dict() for r in report],
        }
    if hasattr(report, "to_dict"):
        return report.to_dict()
    raise ValidationError(f"Cannot serialize a {type(report).__name__} report")


def _table(document: dict) -> tuple[list[str], list[list[str]]]:
    """Flat CSV layout of a report document, one row per grid cell / fit / day."""
    kind = document.get("kind")
    schema = document.get("schema", settings.REPORT_SCHEMA)

    if kind == "table":
        return list(document["header"]), [list(r) for r in document["rows"]]

    if kind in ("fit", "fits"):
        fits = [document] if kind == "fit" else document["fits"]
        p = max((len(f["beta"]) for f in fits), default=0)
        header = ["schema", "method", "variant", "gamma", "support"]
        header += [f"beta_{j}" for j in range(1, p + 1)]
        header += ["objective", "loss_part", "penalty_part"]
        rows = []
        for f in fits:
            rows.append(
                [schema, f["method"], f["variant"], _format_value(f["gamma"]),
                 _format_value(f["support"])]
                + [_format_value(b) for b in f["beta"]]
                + [_format_value(f[k]) for k in ("objective", "loss_part", "penalty_part")]
            )
        return header, rows

    if kind == "simulation":
        cells = document["cells"]
        p = max((len(c["selection_frequency"]) for c in cells), default=0)
        keys = [k for k in (cells[0].keys() if cells else []) if k != "selection_frequency"]
        header = ["schema"] + keys + [f"freq_x{j}" for j in range(1, p + 1)]
        rows = [
            [schema]
            + [_format_value(c[k]) for k in keys]
            + [_format_value(v) for v in c["selection_frequency"]]
            for c in cells
        ]
        return header, rows

    if kind == "cv":
        header = ["schema", "method", "variant", "day", "folds", "daily_mse", "chosen_gamma"]
        rows = []
        for curve in document["curves"]:
            for day, count, mse, gamma in zip(
                document["days"], document["day_counts"], curve["daily_mse"], curve["chosen_gamma"]
            ):
                rows.append(
                    [schema, curve["method"], curve["variant"], str(day), str(count),
                     _format_value(mse), _format_value(gamma)]
                )
        return header, rows

    raise ValidationError(f"Report kind '{kind}' has no CSV layout")


def _finite_or_none(value: Any) -> Any:
    # JSON has no NaN or infinity; undefined statistics become null
    if isinstance(value, dict):
        return {key: _finite_or_none(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite_or_none(item) for item in value]
    if isinstance(value, (float, np.floating)) and not np.isfinite(value):
        return None
    return value


def render_report(report: Any, format: str = "json") -> str:
    """
    Serialize a report with stable field order and round-trip float precision.

    Rendering a report loaded by ``read_report`` reproduces the file byte for byte.
    """
    if format not in settings.REPORT_FORMATS:
        raise ValidationError(
            f"Unknown report format '{format}'; expected one of {settings.REPORT_FORMATS}"
        )
    document = report_dict(report)
    if format == "csv":
        return _csv_text(*_table(document))
    return (
        json.dumps(_finite_or_none(document), indent=2, ensure_ascii=False, allow_nan=False)
        + "\n"
    )


def write_report(report: Any, path: PathLike, format: str = "json") -> None:
    document = report_dict(report)
    _write_text(path, render_report(document, format))
    logger.info(f"Wrote {document.get('kind', 'report')} report to {path} ({format})")


def read_report(path: PathLike, format: Optional[str] = None) -> dict:
    """
    Load a report written by ``write_report``.

    JSON reports come back as their document; CSV reports as a ``table``
    document holding the raw header and cells.
    """
    path = Path(path)
    format = format or ("csv" if path.suffix.lower() == ".csv" else "json")
    if format == "csv":
        frame = read_table(path)
        return {
            "schema": settings.REPORT_SCHEMA,
            "kind": "table",
            "header": list(frame.columns),
            "rows": frame.astype(str).values.tolist(),
        }
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ReportIOError(f"Failed to read {path}: {e}") from e
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"Malformed JSON report {path}: {e.msg}", row=e.lineno) from e
    if not isinstance(document, dict) or "schema" not in document:
        raise SchemaError(f"{path} is not a report (no schema field)")
    if document["schema"] != settings.REPORT_SCHEMA:
        raise SchemaError(
            f"{path} has schema '{document['schema']}', expected '{settings.REPORT_SCHEMA}'"
        )
    return document
