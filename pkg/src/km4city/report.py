"""Delimited report files with companion figures for scoring runs.

Both report writers put a TSV at the requested path and render a PNG chart
next to it, so a benchmark or evaluation leaves one machine-readable table
and one human-readable picture per run.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")  # file rendering only, no display server

from matplotlib import pyplot  # noqa: E402  (backend must be fixed first)

from .evaluate import MetricsReport, comparison_tsv


@dataclass(frozen=True)
class ReportPaths:
    table: Path
    figure: Path


_METRICS = ("precision", "recall", "f1")


def eval_tsv(report: MetricsReport) -> str:
    """Overall counts and metrics, then one row per reconciliation level."""
    out = ["scope\ttp\tfp\tfn\tprecision\trecall\tf1"]

    def row(scope, rep):
        c = rep.counts
        out.append("\t".join([scope, str(c.tp), str(c.fp), str(c.fn),
                              f"{rep.precision:.4f}", f"{rep.recall:.4f}",
                              f"{rep.f1:.4f}"]))

    row("overall", report)
    for name in sorted(report.by_level):
        row(name, report.by_level[name])
    return "\n".join(out) + "\n"


def _save(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    pyplot.close(fig)


def metrics_figure(report: MetricsReport, path) -> Path:
    """Bar chart of precision, recall and F1, split by level when present."""
    path = Path(path)
    groups = [("overall", report)]
    groups += [(name, report.by_level[name])
               for name in sorted(report.by_level)]
    fig, ax = pyplot.subplots(figsize=(1.8 + 1.6 * len(groups), 3.6))
    width = 0.8 / len(_METRICS)
    for i, metric in enumerate(_METRICS):
        xs = [g + i * width for g in range(len(groups))]
        ys = [getattr(rep, metric) for _label, rep in groups]
        ax.bar(xs, ys, width=width, label=metric)
    ax.set_xticks([g + width for g in range(len(groups))])
    ax.set_xticklabels([label for label, _rep in groups])
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    ax.legend(fontsize="small")
    _save(fig, path)
    return path


def comparison_figure(rows: list, path) -> Path:
    """Method comparison as grouped precision/recall/F1 bars."""
    path = Path(path)
    fig, ax = pyplot.subplots(figsize=(2.0 + 1.3 * max(1, len(rows)), 4.0))
    width = 0.8 / len(_METRICS)
    for i, metric in enumerate(_METRICS):
        xs = [r + i * width for r in range(len(rows))]
        ys = [getattr(row.report, metric) for row in rows]
        ax.bar(xs, ys, width=width, label=metric)
    ax.set_xticks([r + width for r in range(len(rows))])
    ax.set_xticklabels([row.method for row in rows], rotation=20, ha="right")
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("score")
    ax.legend(fontsize="small")
    _save(fig, path)
    return path


def _figure_path(table_path: Path) -> Path:
    return table_path.with_suffix(".png")


def write_eval_report(report: MetricsReport, table_path) -> ReportPaths:
    """Write the metrics TSV and its chart; returns both paths."""
    table_path = Path(table_path)
    table_path.write_text(eval_tsv(report), encoding="utf-8")
    figure = metrics_figure(report, _figure_path(table_path))
    return ReportPaths(table_path, figure)


def write_comparison_report(rows: list, table_path) -> ReportPaths:
    """Write the method comparison TSV and its chart; returns both paths."""
    table_path = Path(table_path)
    table_path.write_text(comparison_tsv(rows), encoding="utf-8")
    figure = comparison_figure(rows, _figure_path(table_path))
    return ReportPaths(table_path, figure)
