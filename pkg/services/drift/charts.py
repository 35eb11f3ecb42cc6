"""
services/drift/charts.py
Static SVG charts for the drift report (multi-series line chart, horizontal bar chart).
Output bytes depend only on the inputs: fixed canvas, fixed palette, no date stamp, fixed id salt.
"""

from pathlib import Path
from typing import Mapping, Sequence, Tuple

import matplotlib
from matplotlib.figure import Figure

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728")
STABLE_SVG = {
    "svg.hashsalt": "drift-report",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "axes.unicode_minus": False,
}


def _save(fig: Figure, path: Path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def line_chart(
    path: Path,
    title: str,
    x_labels: Sequence[str],
    series: Mapping[str, Sequence[float]],
    *,
    x_label: str = "",
    y_label: str = "",
    tick_every: int = 1,
) -> Path:
    """One line per named series over shared x bins; empty series draw as flat lines."""
    with matplotlib.rc_context(STABLE_SVG):
        fig = Figure(figsize=(7.2, 3.6), layout="constrained")
        ax = fig.add_subplot()
        xs = range(len(x_labels))
        for k, (name, values) in enumerate(series.items()):
            ys = list(values) or [0.0] * len(x_labels)
            ax.plot(xs[:len(ys)], ys, color=PALETTE[k % len(PALETTE)], linewidth=1.5, label=name)
        ticks = [i for i in xs if i % tick_every == 0]
        ax.set_xticks(ticks, [x_labels[i] for i in ticks])
        ax.set_ylim(bottom=0.0)
        ax.set_title(title)
        ax.set_xlabel(x_label)
        ax.set_ylabel(y_label)
        ax.grid(True, alpha=0.3)
        if series:
            ax.legend(loc="upper right", fontsize=8)
        return _save(fig, path)


def bar_chart(path: Path, title: str, bars: Sequence[Tuple[str, float]], *, x_label: str = "") -> Path:
    """Horizontal bars around a zero line, first bar on top; negative values extend left."""
    with matplotlib.rc_context(STABLE_SVG):
        fig = Figure(figsize=(7.2, max(1.2 + 0.25 * len(bars), 2.0)), layout="constrained")
        ax = fig.add_subplot()
        names = [name for name, _ in bars]
        values = [value for _, value in bars]
        colors = [PALETTE[3] if v < 0 else PALETTE[0] for v in values]
        ax.barh(range(len(bars)), values, color=colors)
        ax.set_yticks(range(len(bars)), names)
        ax.invert_yaxis()
        ax.axvline(0.0, color="#333333", linewidth=0.8)
        ax.set_title(title)
        ax.set_xlabel(x_label)
        return _save(fig, path)
