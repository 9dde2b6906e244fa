"""Figures written next to the tabular outputs: curves, SSMs, learning curves.

Plots are built on bare :class:`matplotlib.figure.Figure` objects (no pyplot
state), so they are safe to render from worker threads. SVG output is made
reproducible by fixing the id salt and dropping the date stamp; path
simplification is off so every curve sample survives as a vertex.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

STYLE = {
    "path.simplify": False,
    "svg.hashsalt": "chorus-kit",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
}

CURVE_COLOR = "#1f3b73"
TRUTH_COLOR = "#9ec5e8"
THRESHOLD_COLOR = "#b2182b"


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    FigureCanvasAgg(fig)
    metadata = {"Date": None} if path.suffix.lower() == ".svg" else {}
    with matplotlib.rc_context(STYLE):
        fig.savefig(path, metadata=metadata)
    return path


def plot_curve(probabilities, out, threshold: float | None = None, chorus_spans=(), title: str = "") -> Path:
    """Probability curve, a horizontal threshold rule labelled ``t``, and shaded truth spans.

    Element ids in the SVG: ``probability`` (the curve), ``threshold`` (the
    rule), ``truth-<i>`` (one per span).
    """
    p = np.asarray(probabilities, dtype=np.float64)
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(7.0, 2.4), layout="constrained")
        ax = fig.add_subplot()
        for i, (start, end) in enumerate(chorus_spans):
            ax.axvspan(start, end, color=TRUTH_COLOR, alpha=0.6, lw=0, gid=f"truth-{i}")
        ax.plot(np.arange(len(p)) + 0.5, p, color=CURVE_COLOR, lw=1.2, gid="probability")
        if threshold is not None and np.isfinite(threshold):
            ax.axhline(threshold, color=THRESHOLD_COLOR, lw=0.9, ls="--", gid="threshold")
            ax.annotate("t", (1.0, threshold), xycoords=("axes fraction", "data"), xytext=(3, 0),
                        textcoords="offset points", va="center", color=THRESHOLD_COLOR)
        ax.set_xlim(0, max(len(p), 1))
        ax.set_ylim(-0.02, 1.02)
        ax.set_xlabel("time (s)")
        ax.set_ylabel("chorus probability")
        if title:
            ax.set_title(title, loc="left")
    return _save(fig, out)


def plot_ssm(matrix, out, seconds_per_row: float = 1.0, title: str = "") -> Path:
    """Distance matrix as an image; darker means closer."""
    d = np.asarray(matrix, dtype=np.float64)
    extent = (0, d.shape[1] * seconds_per_row, d.shape[0] * seconds_per_row, 0)
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(4.2, 4.0), layout="constrained")
        ax = fig.add_subplot()
        im = ax.imshow(d, cmap="gray", interpolation="nearest", extent=extent, gid="ssm")
        fig.colorbar(im, ax=ax, shrink=0.8, label="distance")
        ax.set_xlabel("time (s)")
        ax.set_ylabel("time (s)")
        if title:
            ax.set_title(title, loc="left")
    return _save(fig, out)


def plot_training_log(rows, out) -> Path:
    """Mean training loss and validation F1 against iteration."""
    it = [r["iteration"] for r in rows]
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(6.0, 2.6), layout="constrained")
        ax = fig.add_subplot()
        ax.plot(it, [r["loss"] for r in rows], color=CURVE_COLOR, lw=1.0, gid="loss")
        ax.set_xlabel("iteration")
        ax.set_ylabel("training MSE", color=CURVE_COLOR)
        ax.set_yscale("log")
        ax2 = ax.twinx()
        ax2.plot(it, [r["val_f1"] for r in rows], color=THRESHOLD_COLOR, lw=1.0, gid="val-f1")
        ax2.set_ylabel("validation F1", color=THRESHOLD_COLOR)
        ax2.set_ylim(0, 1)
    return _save(fig, out)
