"""
CSV / text emission of evaluation results.

All CSVs are UTF-8, comma separated, with a header row and '.' decimals.
"""
import os
from typing import Dict, Iterable, List, Sequence

import numpy as np
import pandas as pd

from scripts.evaluation.statistics import AgreementReport, AnovaTable, BoxplotSummary
from scripts.utils.errors import FormatError

FLOAT_FORMAT = "%.6f"
METRIC_COLUMNS = ("dice", "hausdorff", "jaccard", "mad")


def write_csv(frame: pd.DataFrame, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, encoding="utf-8")


def read_csv(path, required_columns: Sequence[str] = ()) -> pd.DataFrame:
    """
    Read a CSV emitted by this package.

    Raises:
        FormatError: If the file cannot be parsed or lacks a required column.
        OSError: If the file cannot be opened.
    """
    try:
        frame = pd.read_csv(path, encoding="utf-8")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise FormatError(f"{path}: {e}") from e
    missing = [c for c in required_columns if c not in frame.columns]
    if missing:
        raise FormatError(f"{path}: missing columns {missing}")
    return frame


def format_mean_sd(values: Iterable[float], digits: int = 3) -> str:
    """'mean ± SD' with the sample SD; NaN values are skipped."""
    data = pd.Series(list(values), dtype=np.float64).dropna()
    if data.empty:
        return "nan"
    sd = data.std(ddof=1) if len(data) > 1 else 0.0
    return f"{data.mean():.{digits}f} ± {sd:.{digits}f}"


def summarize_metrics(frame: pd.DataFrame, columns: Sequence[str] = METRIC_COLUMNS) -> pd.DataFrame:
    """One row per metric: mean, sd, n and the 'mean ± SD' summary string."""
    rows = []
    for column in columns:
        data = frame[column].astype(np.float64).dropna()
        rows.append({
            "metric": column,
            "mean": float(data.mean()) if len(data) else np.nan,
            "sd": float(data.std(ddof=1)) if len(data) > 1 else 0.0,
            "n": int(len(data)),
            "summary": format_mean_sd(data),
        })
    return pd.DataFrame(rows, columns=["metric", "mean", "sd", "n", "summary"])


def agreement_frame(reports: List[AgreementReport]) -> pd.DataFrame:
    return pd.DataFrame([r.to_row() for r in reports])


def boxplot_frame(summaries: Dict[str, BoxplotSummary]) -> pd.DataFrame:
    rows = []
    for parameter, summary in summaries.items():
        row = {"parameter": parameter}
        row.update(vars(summary))
        rows.append(row)
    return pd.DataFrame(rows)


def write_anova(table: AnovaTable, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(table.to_text())
