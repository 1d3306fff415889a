"""Figure rendering for reports and comparisons.

Renders the normalized-attribute radar and the per-row bar charts for the
three composite metrics to PNG files next to the delimited outputs. Uses the
Agg backend so it works headless.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .report import ComparisonTable

METRIC_BARS = [("si", "Speed Index"), ("mpi", "Model Performance Index"), ("rer", "Resource Efficiency Ratio")]


def render_metric_bars(labels: list[str], rows: list[dict], out_path: str | Path) -> Path:
    """Bar chart per composite metric across rows; missing metrics are skipped."""
    out_path = Path(out_path)
    panels = [(key, title) for key, title in METRIC_BARS if any(row.get(key) is not None for row in rows)]
    if not panels:
        panels = [("si", "Speed Index")]
    fig, axes = plt.subplots(1, len(panels), figsize=(4.2 * len(panels), 3.6))
    if len(panels) == 1:
        axes = [axes]
    x = np.arange(len(labels))
    for ax, (key, title) in zip(axes, panels):
        values = [row.get(key) or 0.0 for row in rows]
        ax.bar(x, values, color="#2b5b9a")
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
        ax.set_title(title, fontsize=10)
        if values and max(values) > 0 and min(v for v in values if v > 0) / max(values) < 1e-2:
            ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def render_attribute_radar(table: ComparisonTable, out_path: str | Path) -> Path:
    """Radar chart of the normalized attribute vectors of a comparison."""
    out_path = Path(out_path)
    attrs = table.attributes
    angles = np.linspace(0, 2 * math.pi, len(attrs), endpoint=False)
    angles = np.concatenate([angles, angles[:1]])
    fig, ax = plt.subplots(figsize=(6.5, 6.5), subplot_kw=dict(polar=True))
    for label, norm in zip(table.labels, table.normalized):
        values = np.array([norm[a] for a in attrs])
        values = np.concatenate([values, values[:1]])
        ax.plot(angles, values, linewidth=1.6, label=label)
        ax.fill(angles, values, alpha=0.08)
    ax.set_xticks(angles[:-1])
    ax.set_xticklabels(attrs, fontsize=8)
    ax.set_ylim(0, 1)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="upper left", bbox_to_anchor=(1.05, 1.0), fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
