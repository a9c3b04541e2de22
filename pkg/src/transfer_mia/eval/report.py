"""Flat tables from an ExperimentResult: CSV files and aligned text."""

from __future__ import annotations

import csv
import io
from pathlib import Path

from .experiments import ExperimentResult

METRIC_COLUMNS = ["AUC", "Accuracy", "Precision", "Recall"]
TABLE_COLUMNS = ["Dataset", *METRIC_COLUMNS]
SWEEP_COLUMNS = ["K", *METRIC_COLUMNS]
TABLE_ORDER = ("attack1", "attack2", "attack3", "transfer", "matched")


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def tables(result: ExperimentResult) -> dict[str, tuple[list[str], list[list[str]]]]:
    """Table name -> (header, rows). Report keys ``<table>/<dataset>`` become rows."""
    grouped: dict[str, list[list[str]]] = {}
    for key in sorted(result.reports):
        table, dataset = key.split("/", 1)
        grouped.setdefault(table, []).append([dataset, *map(_fmt, result.reports[key].row())])
    out = {name: (TABLE_COLUMNS, grouped[name]) for name in TABLE_ORDER if name in grouped}
    for corpus, series in sorted(result.sweeps.items()):
        name = "sweep" if len(result.sweeps) == 1 else f"sweep_{corpus}"
        rows = [[str(s.frozen_blocks), *map(_fmt, s.report.row())] for s in sorted(series, key=lambda s: s.frozen_blocks)]
        out[name] = (SWEEP_COLUMNS, rows)
    return out


def to_csv(header: list[str], rows: list[list[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_tables(result: ExperimentResult, directory: str | Path) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for name, (header, rows) in tables(result).items():
        path = directory / f"{name}.csv"
        path.write_text(to_csv(header, rows))
        written.append(path)
    return written


def render_text(result: ExperimentResult) -> str:
    blocks = []
    for name, (header, rows) in tables(result).items():
        widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
        line = lambda cells: "  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w)
                                       for i, (c, w) in enumerate(zip(cells, widths)))
        body = [line(header), "  ".join("-" * w for w in widths), *(line(r) for r in rows)]
        blocks.append(f"[{name}]\n" + "\n".join(body))
    return "\n\n".join(blocks)
