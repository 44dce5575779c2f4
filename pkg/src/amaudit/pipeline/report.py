"""Report serialization: the full nested JSON and a flat per-method CSV."""

from __future__ import annotations

import csv
from pathlib import Path

from ..errors import ConfigError, OutputError
from ..faithfulness import DELETION, INSERTION
from .config import ALIGNMENT, SHARING
from .runner import REPORT_FILE, EvaluationReport, to_json

SUMMARY_FILE = "summary.csv"
FORMATS = ("json", "csv")


def summary_rows(report: EvaluationReport) -> tuple[list[str], list[list]]:
    """Header and one row per method; only computed metrics get columns."""
    agg = report.aggregates
    columns: list[tuple[str, callable]] = []
    for mode in (DELETION, INSERTION):
        if f"{mode}_auc" in agg:
            columns.append((f"{mode}_auc", lambda m, k=f"{mode}_auc": agg[k][m]))
    if ALIGNMENT in agg:
        columns.append(("alignment_pearson", lambda m: agg[ALIGNMENT][m]["pearson"]))
        columns.append(("alignment_jsd", lambda m: agg[ALIGNMENT][m]["jsd"]))
    if SHARING in agg:
        columns.append(("sharing_pearson", lambda m: agg[SHARING][m]["mean_pairwise_pearson"]))
    header = ["method"] + [name for name, _ in columns]
    rows = [[m] + ["" if get(m) is None else repr(float(get(m))) for _, get in columns]
            for m in report.method_ids]
    return header, rows


def emit_report(report: EvaluationReport, out_dir, formats=FORMATS) -> list[Path]:
    if isinstance(formats, str):
        formats = [f.strip() for f in formats.split(",") if f.strip()]
    bad = [f for f in formats if f not in FORMATS]
    if bad:
        raise ConfigError(f"unknown report formats {bad}; known: {list(FORMATS)}")
    out_dir = Path(out_dir)
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if "json" in formats:
            path = out_dir / REPORT_FILE
            path.write_text(to_json(report))
            written.append(path)
        if "csv" in formats:
            path = out_dir / SUMMARY_FILE
            header, rows = summary_rows(report)
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(rows)
            written.append(path)
    except OSError as exc:
        raise OutputError(f"cannot write report files to {out_dir}: {exc}") from exc
    return written
