"""Report files: JSON, CSV tables and figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .run import ReconstructionReport

VOIGT_COLUMNS = [f"c{i + 1}{j + 1}" for i, j in zip(*np.triu_indices(6))]
BLOCK_COLUMNS = ["label", "depth", "path", "method", "status", "error", "residual", *VOIGT_COLUMNS, "message"]
STEP_COLUMNS = ["label", "inner_labels", "status", "strip_error", "smooth_error", "runge_residual", "runge_rank",
                "retained_rank", "symmetrization_defect", "sigma2_vertices", "message"]
DEPTH_COLUMNS = ["depth", "label", "error", "upstream_strip_error"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: Path, columns: list, rows: list) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
    return path


def block_rows(report: ReconstructionReport) -> list[dict]:
    rows = []
    for b in report.blocks:
        row = {"label": b.label, "depth": b.depth, "path": ">".join(map(str, b.path)), "method": b.method,
               "status": b.status, "error": b.error, "residual": b.residual, "message": b.message}
        if b.voigt is not None:
            row.update(zip(VOIGT_COLUMNS, np.asarray(b.voigt)[np.triu_indices(6)].tolist()))
        rows.append(row)
    return rows


def step_rows(report: ReconstructionReport) -> list[dict]:
    rows = []
    for s in report.steps:
        row = {c: getattr(s, c) for c in STEP_COLUMNS}
        row["inner_labels"] = " ".join(map(str, s.inner_labels))
        rows.append(row)
    return rows


def depth_rows(report: ReconstructionReport) -> list[dict]:
    strip = {s.label: s.strip_error for s in report.steps}
    rows = []
    for b in report.blocks:
        if b.error is None:
            continue
        up = [strip.get(lab) for lab in b.path[:-1]]
        up = [u for u in up if u is not None]
        rows.append({"depth": b.depth, "label": b.label, "error": b.error,
                     "upstream_strip_error": max(up) if up else None})
    return sorted(rows, key=lambda r: (r["depth"], r["label"]))


def emit_report(report: ReconstructionReport, out_dir, figures: bool = True) -> list[Path]:
    """Write report.json, blocks.csv, steps.csv, error_vs_depth.csv,
    undetermined.csv and (optionally) PNG figures into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.json"]
    paths[0].write_text(report.dumps())
    paths.append(_write_csv(out / "blocks.csv", BLOCK_COLUMNS, block_rows(report)))
    paths.append(_write_csv(out / "steps.csv", STEP_COLUMNS, step_rows(report)))
    paths.append(_write_csv(out / "error_vs_depth.csv", DEPTH_COLUMNS, depth_rows(report)))
    und = [{"label": u["label"], "reason": u["reason"], "patches": " ".join(u["patches"])}
           for u in report.plan.get("undetermined", [])]
    paths.append(_write_csv(out / "undetermined.csv", ["label", "reason", "patches"], und))
    if figures:
        from .plotting import render_figures

        paths.extend(render_figures(report, out))
    return paths


def load_report(path) -> ReconstructionReport:
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return ReconstructionReport.from_json(json.loads(path.read_text()))
