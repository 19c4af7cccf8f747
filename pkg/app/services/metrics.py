"""Per-step metrics CSV with a versioned header; appends never duplicate a step"""

from pathlib import Path
from typing import List, Sequence
import logging

import pandas as pd

from app.core.exceptions import FormatError
from app.schemas.metrics import METRICS_COLUMNS, METRICS_HEADER, MetricsRow

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def _frame(rows: Sequence[MetricsRow]) -> pd.DataFrame:
    return pd.DataFrame([row.model_dump() for row in rows], columns=METRICS_COLUMNS)


def read_metrics(path: str) -> pd.DataFrame:
    target = Path(path)
    with target.open("r", encoding="utf-8") as handle:
        header = handle.readline() + handle.readline()
    if header != METRICS_HEADER:
        raise FormatError(f"{target} does not start with the expected metrics header")
    return pd.read_csv(target, skiprows=1)


def emit_metrics(rows: Sequence[MetricsRow], path: str, append: bool = True) -> Path:
    """
    Write rows to `path`.

    With append=True and an existing file, only rows whose step is not
    already present are added, so resumed runs stay one row per step.
    """
    if not rows:
        raise ValueError("no metrics rows to write")

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    pending: List[MetricsRow] = list(rows)

    if append and target.exists():
        existing = set(read_metrics(str(target))["step"].astype(int).tolist())
        pending = [row for row in pending if row.step not in existing]
        if not pending:
            return target
        with target.open("a", encoding="utf-8", newline="") as handle:
            _frame(pending).to_csv(handle, header=False, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    else:
        with target.open("w", encoding="utf-8", newline="") as handle:
            handle.write(METRICS_HEADER)
            _frame(pending).to_csv(handle, header=False, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")

    logger.debug("Wrote %d metrics rows to %s", len(pending), target)
    return target
