"""Render evaluation results to files: JSON, an aligned text table whose
rows are feature spaces and columns are methods, a per-sequence predictions
CSV, and summary figures."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import numpy as np

from .evaluate import (
    CellResult,
    EvalReport,
    ExperimentConfig,
    FoldFailure,
    PredictionRow,
    roc_auc,
)

KIND_NAMES = {
    "keypoints2d": "2D Keypoints",
    "keypoints3d": "3D Keypoints",
    "blendshapes": "BlendShapes",
}
METHOD_NAMES = {
    "dfl-max": "Max",
    "dfl-gp": "GP",
    "dfl-svr": "SVR",
    "dfl-svc": "DFL-Binary",
    "mil-cluster": "MIL-Cluster",
    "mil-random": "MIL-Random",
    "mil-uniform": "MIL-Uniform",
}
# canonical column orders
_REGRESSION_ORDER = ("dfl-max", "dfl-gp", "dfl-svr")
_BINARY_ORDER = ("dfl-svc", "mil-cluster", "mil-random", "mil-uniform")


def _fmt(value: float) -> str:
    return "-" if math.isnan(value) else f"{value:.3f}"


def _table(
    title: str,
    kinds: list[str],
    methods: list[str],
    value: Callable[[str, str], str],
) -> str:
    headers = [METHOD_NAMES[m] for m in methods]
    rows = []
    for kind in kinds:
        rows.append([KIND_NAMES[kind]] + [value(kind, m) for m in methods])
    widths = [
        max(len(r[c]) for r in rows + [[""] + headers])
        for c in range(len(methods) + 1)
    ]
    lines = [title]
    lines.append("  ".join(
        h.ljust(w) for h, w in zip([""] + headers, widths)
    ).rstrip())
    for r in rows:
        lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip())
    return "\n".join(lines)


def render_text_table(report: EvalReport) -> str:
    """The aligned text summary: one MAE table and, for binary methods, a
    fold-mean AUC table plus a pooled AUC table."""
    kinds = list(report.config.kinds)
    reg = [m for m in _REGRESSION_ORDER if m in report.config.methods]
    binary = [m for m in _BINARY_ORDER if m in report.config.methods]
    blocks = []
    if reg:
        blocks.append(_table(
            "Mean absolute error (raw 0-10 scale, pooled over test sequences)",
            kinds, reg,
            lambda k, m: _fmt(report.cell(k, m).aggregate),
        ))
    if binary:
        blocks.append(_table(
            "AUC (mean over folds)",
            kinds, binary,
            lambda k, m: _fmt(report.cell(k, m).aggregate),
        ))
        blocks.append(_table(
            "AUC (pooled over folds)",
            kinds, binary,
            lambda k, m: _fmt(report.cell(k, m).pooled),
        ))
    failures = [
        f"  {c.kind}/{c.method} fold {f.fold_id}: {f.reason}"
        for c in report.cells for f in c.failures
    ]
    if failures:
        blocks.append("Excluded folds:\n" + "\n".join(failures))
    blocks.append(
        f"Scheme: {report.scheme}, {report.n_folds} folds, seed {report.config.seed}"
    )
    return "\n\n".join(blocks) + "\n"


# ---------------------------------------------------------------------------
# JSON round trip
# ---------------------------------------------------------------------------

def _nan_to_none(value: float) -> float | None:
    return None if math.isnan(value) else value


def report_to_dict(report: EvalReport) -> dict:
    return {
        "config": dataclasses.asdict(report.config),
        "scheme": report.scheme,
        "n_folds": report.n_folds,
        "cells": [
            {
                "kind": c.kind,
                "method": c.method,
                "task": c.task,
                "fold_ids": list(c.fold_ids),
                "fold_values": list(c.fold_values),
                "aggregate": _nan_to_none(c.aggregate),
                "pooled": _nan_to_none(c.pooled),
                "failures": [
                    {"fold_id": f.fold_id, "reason": f.reason}
                    for f in c.failures
                ],
                "rows": [
                    {
                        "sequence_id": r.sequence_id,
                        "fold_id": r.fold_id,
                        "true_raw": r.true_raw,
                        "predicted": r.predicted,
                        "decision": r.decision,
                    }
                    for r in c.rows
                ],
            }
            for c in report.cells
        ],
    }


def report_from_dict(doc: dict) -> EvalReport:
    cfg = dict(doc["config"])
    for key in ("kinds", "methods", "mlp_hidden"):
        cfg[key] = tuple(cfg[key])
    nan = float("nan")
    cells = []
    for c in doc["cells"]:
        cells.append(CellResult(
            kind=c["kind"],
            method=c["method"],
            task=c["task"],
            fold_ids=list(c["fold_ids"]),
            fold_values=[float(v) for v in c["fold_values"]],
            aggregate=nan if c["aggregate"] is None else float(c["aggregate"]),
            pooled=nan if c["pooled"] is None else float(c["pooled"]),
            failures=[
                FoldFailure(f["fold_id"], f["reason"]) for f in c["failures"]
            ],
            rows=[
                PredictionRow(
                    sequence_id=r["sequence_id"],
                    fold_id=r["fold_id"],
                    true_raw=int(r["true_raw"]),
                    predicted=float(r["predicted"]),
                    decision=None if r["decision"] is None else float(r["decision"]),
                )
                for r in c["rows"]
            ],
        ))
    return EvalReport(
        config=ExperimentConfig(**cfg),
        scheme=doc["scheme"],
        n_folds=int(doc["n_folds"]),
        cells=cells,
    )


# ---------------------------------------------------------------------------
# file emission
# ---------------------------------------------------------------------------

def _config_echo(report: EvalReport) -> str:
    return json.dumps(dataclasses.asdict(report.config), sort_keys=True)


def write_predictions_csv(report: EvalReport, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config {_config_echo(report)}\n")
        writer = csv.writer(fh)
        writer.writerow([
            "kind", "method", "fold_id", "sequence_id",
            "true_raw", "predicted", "decision",
        ])
        for c in report.cells:
            for r in c.rows:
                writer.writerow([
                    c.kind, c.method, r.fold_id, r.sequence_id, r.true_raw,
                    repr(r.predicted),
                    "" if r.decision is None else repr(r.decision),
                ])


def _write_figures(report: EvalReport, out_dir: Path) -> list[Path]:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    kinds = list(report.config.kinds)
    for task, methods, metric, fname in (
        ("regression", _REGRESSION_ORDER, "MAE (raw scale)", "mae.png"),
        ("binary", _BINARY_ORDER, "AUC (fold mean)", "auc.png"),
    ):
        methods = [m for m in methods if m in report.config.methods]
        if not methods:
            continue
        fig, ax = plt.subplots(figsize=(7, 4))
        x = np.arange(len(kinds))
        width = 0.8 / len(methods)
        for i, method in enumerate(methods):
            values = [report.cell(k, method).aggregate for k in kinds]
            ax.bar(
                x + (i - (len(methods) - 1) / 2) * width, values, width,
                label=METHOD_NAMES[method],
            )
        ax.set_xticks(x)
        ax.set_xticklabels([KIND_NAMES[k] for k in kinds])
        ax.set_ylabel(metric)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / fname
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)

    curves = []
    for c in report.cells:
        if c.task != "binary" or not c.rows:
            continue
        labels = [r.true_raw > 4 for r in c.rows]
        if len(set(labels)) < 2:
            continue
        curve = roc_auc([r.decision for r in c.rows], labels)
        curves.append((f"{KIND_NAMES[c.kind]} {METHOD_NAMES[c.method]}", curve))
    if curves:
        fig, ax = plt.subplots(figsize=(5.5, 5))
        for label, curve in curves:
            ax.plot(
                curve.points[:, 0], curve.points[:, 1],
                label=f"{label} ({curve.auc:.3f})",
            )
        ax.plot([0, 1], [0, 1], ls=":", c="gray", lw=1)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_title("Pooled ROC")
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = out_dir / "roc.png"
        fig.savefig(path, dpi=110)
        plt.close(fig)
        written.append(path)
    return written


def write_report_files(
    report: EvalReport, out_dir: str | Path, *, figures: bool = True
) -> dict[str, Path | list[Path]]:
    """Write report.json, report.txt, predictions.csv, and figures.

    The JSON carries a ``generated_at`` timestamp; everything else in every
    file is a pure function of the report.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    doc = {"generated_at": datetime.now(timezone.utc).isoformat()}
    doc.update(report_to_dict(report))
    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    text_path = out_dir / "report.txt"
    text_path.write_text(
        render_text_table(report) + "\nconfig " + _config_echo(report) + "\n"
    )

    csv_path = out_dir / "predictions.csv"
    write_predictions_csv(report, csv_path)

    out = {"json": json_path, "text": text_path, "csv": csv_path}
    if figures:
        out["figures"] = _write_figures(report, out_dir)
    return out
