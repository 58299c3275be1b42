"""Append-only metrics log (one JSON object per line) and a text report."""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import FormatError


@dataclass(frozen=True)
class MetricsRecord:
    stage: str
    epoch: int
    values: dict[str, float]


def append_metrics(path, record: MetricsRecord) -> None:
    payload = {"stage": record.stage, "epoch": record.epoch,
               "values": {k: float(v) for k, v in record.values.items()}}
    line = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(line + "\n")


def read_metrics(path) -> list[MetricsRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"metrics line {lineno} is not JSON: {exc}") from exc
            try:
                records.append(MetricsRecord(stage=payload["stage"],
                                             epoch=int(payload["epoch"]),
                                             values=dict(payload["values"])))
            except (KeyError, TypeError) as exc:
                raise FormatError(f"metrics line {lineno} missing fields") from exc
    return records


def render_report(records: list[MetricsRecord]) -> str:
    """Render one fixed-width table per stage, epochs as rows."""
    if not records:
        return "(no metrics recorded)\n"
    stages: dict[str, list[MetricsRecord]] = {}
    for record in records:
        stages.setdefault(record.stage, []).append(record)

    sections = []
    for stage, rows in stages.items():
        keys = sorted({k for row in rows for k in row.values})
        header = ["epoch"] + keys
        table = [header]
        for row in sorted(rows, key=lambda r: r.epoch):
            cells = [str(row.epoch)]
            for key in keys:
                value = row.values.get(key)
                cells.append("-" if value is None else f"{value:.6g}")
            table.append(cells)
        widths = [max(len(r[i]) for r in table) for i in range(len(header))]
        lines = [f"== {stage} =="]
        for r in table:
            lines.append("  ".join(cell.rjust(w) for cell, w in zip(r, widths)))
        sections.append("\n".join(lines))
    return "\n\n".join(sections) + "\n"
