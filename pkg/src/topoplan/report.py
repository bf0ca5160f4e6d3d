"""Evaluation report bundle: per-day and per-split tables plus charts.

Tables are written with fixed number formatting so identical inputs give
byte-identical files; charts are rendered to SVG with date metadata
suppressed.
"""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .pareto import DayMetrics

log = logging.getLogger(__name__)

SPLIT_ORDER = ("train", "in_dist", "out_dist")


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def write_day_table(path: Path, rows: list[tuple[str, DayMetrics]]) -> None:
    """One row per (day, approach); `rows` pairs a split label with metrics."""
    rows = sorted(rows, key=lambda r: (r[1].day, r[1].approach))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day", "split", "approach", "best_max_rho_n1", "solved",
                    "n_switching_of_best", "hypervolume", "n_plans"])
        for split, m in rows:
            w.writerow([m.day, split, m.approach, _fmt(m.best_max_rho_n1),
                        int(m.solved), m.n_switching_of_best,
                        _fmt(m.hypervolume), m.n_plans])


def split_summary(rows: list[tuple[str, DayMetrics]]) -> list[dict]:
    """Aggregate per (split, approach): hypervolume quartile statistics,
    solved-day counts, and mean switching of the best plan."""
    groups: dict[tuple[str, str], list[DayMetrics]] = defaultdict(list)
    for split, m in rows:
        groups[(split, m.approach)].append(m)
    out = []
    for (split, approach) in sorted(
            groups, key=lambda k: (SPLIT_ORDER.index(k[0])
                                   if k[0] in SPLIT_ORDER else 99, k[1])):
        ms = groups[(split, approach)]
        hv = np.array([m.hypervolume for m in ms])
        out.append({
            "split": split,
            "approach": approach,
            "days": len(ms),
            "hv_median": float(np.median(hv)),
            "hv_q1": float(np.percentile(hv, 25)),
            "hv_q3": float(np.percentile(hv, 75)),
            "hv_min": float(hv.min()),
            "hv_max": float(hv.max()),
            "solved_days": sum(m.solved for m in ms),
            "mean_best_rho": float(np.mean([m.best_max_rho_n1 for m in ms])),
            "mean_n_switching": float(np.mean([m.n_switching_of_best
                                               for m in ms])),
        })
    return out


def write_split_table(path: Path, summary: list[dict]) -> None:
    cols = ["split", "approach", "days", "hv_median", "hv_q1", "hv_q3",
            "hv_min", "hv_max", "solved_days", "mean_best_rho",
            "mean_n_switching"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in summary:
            w.writerow([row[c] if c in ("split", "approach", "days",
                                        "solved_days")
                        else _fmt(row[c]) for c in cols])


def _save_svg(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _grouped(rows):
    by_split: dict[str, dict[str, list[DayMetrics]]] = defaultdict(
        lambda: defaultdict(list))
    for split, m in rows:
        by_split[split][m.approach].append(m)
    splits = [s for s in SPLIT_ORDER if s in by_split] + sorted(
        set(by_split) - set(SPLIT_ORDER))
    approaches = sorted({m.approach for _, m in rows})
    return by_split, splits, approaches


def chart_hypervolume(rows, path: Path) -> None:
    """Grouped box plots of per-day hypervolume by approach and split."""
    by_split, splits, approaches = _grouped(rows)
    fig, axes = plt.subplots(1, len(splits), figsize=(4 * len(splits), 4),
                             sharey=True, squeeze=False)
    for ax, split in zip(axes[0], splits):
        data = [[m.hypervolume for m in by_split[split].get(a, [])]
                for a in approaches]
        ax.boxplot(data, tick_labels=approaches)
        ax.set_title(split)
        ax.tick_params(axis="x", rotation=45)
    axes[0][0].set_ylabel("hypervolume")
    fig.tight_layout()
    _save_svg(fig, path)


def chart_best_rho(rows, path: Path) -> None:
    by_split, splits, approaches = _grouped(rows)
    fig, axes = plt.subplots(1, len(splits), figsize=(4 * len(splits), 4),
                             sharey=True, squeeze=False)
    for ax, split in zip(axes[0], splits):
        data = [[m.best_max_rho_n1 for m in by_split[split].get(a, [])]
                for a in approaches]
        ax.boxplot(data, tick_labels=approaches)
        ax.axhline(1.0, linestyle="--", linewidth=1)
        ax.set_title(split)
        ax.tick_params(axis="x", rotation=45)
    axes[0][0].set_ylabel("best max rho n-1")
    fig.tight_layout()
    _save_svg(fig, path)


def chart_solved_days(rows, path: Path) -> None:
    by_split, splits, approaches = _grouped(rows)
    fig, ax = plt.subplots(figsize=(2 + 1.4 * len(splits) * len(approaches), 4))
    width = 0.8 / max(1, len(approaches))
    xs = np.arange(len(splits))
    for k, a in enumerate(approaches):
        counts = [sum(m.solved for m in by_split[s].get(a, []))
                  for s in splits]
        ax.bar(xs + k * width, counts, width, label=a)
    ax.set_xticks(xs + width * (len(approaches) - 1) / 2)
    ax.set_xticklabels(splits)
    ax.set_ylabel("solved days")
    ax.legend(fontsize="small")
    fig.tight_layout()
    _save_svg(fig, path)


def chart_switching(rows, path: Path) -> None:
    by_split, splits, approaches = _grouped(rows)
    fig, ax = plt.subplots(figsize=(2 + 1.4 * len(splits) * len(approaches), 4))
    width = 0.8 / max(1, len(approaches))
    xs = np.arange(len(splits))
    for k, a in enumerate(approaches):
        means = [np.mean([m.n_switching_of_best
                          for m in by_split[s].get(a, [])] or [0])
                 for s in splits]
        ax.bar(xs + k * width, means, width, label=a)
    ax.set_xticks(xs + width * (len(approaches) - 1) / 2)
    ax.set_xticklabels(splits)
    ax.set_ylabel("mean N switching of best plan")
    ax.legend(fontsize="small")
    fig.tight_layout()
    _save_svg(fig, path)


def emit_report(rows: list[tuple[str, DayMetrics]], out_dir) -> dict:
    """Write the full bundle; returns a manifest of produced files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    day_table = out / "per_day_metrics.csv"
    split_table = out / "split_summary.csv"
    write_day_table(day_table, rows)
    summary = split_summary(rows)
    write_split_table(split_table, summary)
    charts = {
        "hypervolume_boxplot": out / "hypervolume_by_split.svg",
        "best_rho_boxplot": out / "best_rho_by_split.svg",
        "solved_days_bar": out / "solved_days.svg",
        "switching_bar": out / "mean_switching.svg",
    }
    chart_hypervolume(rows, charts["hypervolume_boxplot"])
    chart_best_rho(rows, charts["best_rho_boxplot"])
    chart_solved_days(rows, charts["solved_days_bar"])
    chart_switching(rows, charts["switching_bar"])
    log.info("report bundle written to %s", out)
    return {
        "per_day_table": str(day_table),
        "split_table": str(split_table),
        **{k: str(v) for k, v in charts.items()},
    }
