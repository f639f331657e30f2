"""
SVG figures: drag-lift phase diagram, force histories and period histogram.
"""

import logging
from pathlib import Path
from typing import Optional, Union

import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from utils.strouhal_utils import PeriodEstimate, TraceSeries  # noqa: E402

logger = logging.getLogger(__name__)


def _save(fig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg")
    plt.close(fig)
    logger.info(f"Wrote {path}")
    return path


def plot_phase_diagram(trace: TraceSeries, path: Union[str, Path], title: Optional[str] = None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 5))
    ax.plot(trace.drag, trace.lift, linewidth=0.6)
    ax.set_xlabel("drag")
    ax.set_ylabel("lift")
    ax.set_title(title or f"Drag-lift phase diagram, t in [{trace.t[0]:g}, {trace.t[-1]:g}]")
    return _save(fig, path)


def plot_forces(trace: TraceSeries, path: Union[str, Path], title: Optional[str] = None) -> Path:
    fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=(8, 5))
    top.plot(trace.t, trace.drag, linewidth=0.6)
    top.set_ylabel("drag")
    bottom.plot(trace.t, trace.lift, linewidth=0.6, color="tab:orange")
    bottom.set_ylabel("lift")
    bottom.set_xlabel("t")
    if title:
        top.set_title(title)
    return _save(fig, path)


def plot_period_histogram(estimate: PeriodEstimate, path: Union[str, Path], title: Optional[str] = None) -> Path:
    edges = np.asarray(estimate.histogram.edges)
    counts = np.asarray(estimate.histogram.counts)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge", edgecolor="black", linewidth=0.4)
    ax.set_xlabel("period")
    ax.set_ylabel("count")
    ax.set_title(title or f"Period {estimate.mean_period:.5g} +- {estimate.std_period:.2g}")
    return _save(fig, path)
