import io
import json
import logging
import math
from pathlib import Path

import pandas as pd

logger = logging.getLogger(__name__)


def _header_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (list, tuple)):
        return ",".join(_header_value(v) for v in value)
    if isinstance(value, bool):
        return str(value).lower()
    return str(value)


def config_header(config: dict) -> str:
    """`# key=value` lines for every config entry, sorted by key."""
    return "".join(f"# {key}={_header_value(config[key])}\n" for key in sorted(config))


def write_csv(df: pd.DataFrame, path: str | Path, config: dict) -> Path:
    """
    Writes a result table preceded by the resolved config as comment lines.

    Read it back with `pd.read_csv(path, comment="#")`.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        f.write(config_header(config))
        df.to_csv(f, index=False, lineterminator="\n")
    logger.info(f"📊 Wrote {len(df)} rows to {path}")
    return path


def _json_safe(value):
    # NaN is not valid JSON
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def write_json(path: str | Path, config: dict, summary: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = _json_safe({"config": config, "summary": summary})
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    logger.info(f"📊 Wrote summary to {path}")
    return path


def results_to_excel(df_mean: pd.DataFrame, df_all: pd.DataFrame) -> io.BytesIO:
    """
    Speichert Mittelwerte und alle Wiederholungen in einer Excel-Datei mit zwei Sheets.

    Parameters:
    - df_mean: one row per model with the mean of every metric
    - df_all: one row per repetition and model

    Returns:
    - io.BytesIO: Buffer mit Excel-Datei
    """
    buffer = io.BytesIO()

    with pd.ExcelWriter(buffer, engine="xlsxwriter") as writer:
        df_mean.to_excel(writer, sheet_name="Mean Values", index=False)
        df_all.to_excel(writer, sheet_name="All Repetitions", index=False)

        # AutoFit Spaltenbreite
        for sheet_name, df in {"Mean Values": df_mean, "All Repetitions": df_all}.items():
            worksheet = writer.sheets[sheet_name]
            for i, col in enumerate(df.columns):
                longest = df[col].astype(str).map(len).max() if len(df) else 0
                worksheet.set_column(i, i, max(longest, len(str(col))) + 2)

    buffer.seek(0)
    return buffer
