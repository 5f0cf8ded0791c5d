"""Figures for the CLI report paths (written straight to image files)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

from .benchmark import RankingTable
from .metrics import PartErrorReport
from .sampling import SamplingPlan


def _save(fig: Figure, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    return path


def plot_ranking(ranking: RankingTable, path: str | Path, top: int | None = None) -> Path:
    rows = ranking.rows[:top] if top else ranking.rows
    names = [r.dataset for r in rows]
    fig = Figure(figsize=(7, 0.28 * len(rows) + 1.2))
    ax = fig.add_subplot()
    y = np.arange(len(rows))
    ax.barh(y, [r.mpe for r in rows], color="tab:blue")
    ax.set_yticks(y, names, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("mean primary error (mm)")
    lo = min(r.mpe for r in rows)
    ax.set_xlim(left=max(0.0, 0.9 * lo))
    return _save(fig, path)


def plot_plan(plan: SamplingPlan, path: str | Path) -> Path:
    names = [e.name for e in plan.entries]
    fig = Figure(figsize=(max(4, 0.5 * len(names) + 2), 3.5))
    ax = fig.add_subplot()
    x = np.arange(len(names))
    ax.bar(x - 0.2, [e.native_length for e in plan.entries], 0.4, label="native")
    ax.bar(x + 0.2, [e.target_length for e in plan.entries], 0.4, label=plan.strategy)
    ax.set_xticks(x, names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("instances")
    ax.legend()
    return _save(fig, path)


def plot_part_report(report: PartErrorReport, path: str | Path) -> Path:
    rows = report.rows()
    fig = Figure(figsize=(5, 3.2))
    ax = fig.add_subplot()
    x = np.arange(len(rows))
    ax.bar(x - 0.2, [raw for _, _, raw in rows], 0.4, label="error")
    ax.bar(x + 0.2, [pa for _, pa, _ in rows], 0.4, label="aligned error")
    ax.set_xticks(x, [p for p, _, _ in rows])
    ax.set_ylabel("mm")
    ax.legend()
    return _save(fig, path)
