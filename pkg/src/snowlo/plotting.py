"""Report figures written next to the CSV outputs.

Figures are built with the object-oriented API on an Agg canvas, so nothing
depends on a display or on pyplot's global state.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .trajectory import DriftMetrics, Trajectory

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _figure(width: float = 5.0, height: float = 3.2, ncols: int = 1):
    import matplotlib

    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(width, height), layout="constrained")
        FigureCanvasAgg(fig)
        axes = fig.subplots(1, ncols)
    return fig, axes


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    return path


def plot_trajectory(path, est: Trajectory, gt: Optional[Trajectory] = None,
                    title: str = "Trajectory (top view)") -> Path:
    fig, ax = _figure(4.5, 4.5)
    if gt is not None:
        g = gt.positions()
        ax.plot(g[:, 0], g[:, 1], color="0.4", lw=1.5, label="ground truth")
    e = est.positions()
    ax.plot(e[:, 0], e[:, 1], color="C3", lw=1.2, label="estimate")
    ax.plot(e[:1, 0], e[:1, 1], "ko", ms=4)
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(title)
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_drift(path, metrics: Mapping[str, DriftMetrics]) -> Path:
    """Translational and rotational drift per segment length, one line per run."""
    fig, (at, ar) = _figure(7.0, 3.0, ncols=2)
    for name, m in metrics.items():
        lengths = sorted(m.per_length)
        t = [m.per_length[L][0] for L in lengths]
        r = [m.per_length[L][1] for L in lengths]
        at.plot(lengths, t, "o-", ms=3, label=name)
        ar.plot(lengths, r, "o-", ms=3, label=name)
    at.set_xlabel("segment length [m]")
    at.set_ylabel("translation error [%]")
    ar.set_xlabel("segment length [m]")
    ar.set_ylabel("rotation error [deg/100 m]")
    at.legend(frameon=False)
    return _save(fig, path)


def plot_ablation(path, names: Sequence[str], t_rel: Sequence[float],
                  r_rel: Sequence[float]) -> Path:
    fig, (at, ar) = _figure(7.0, 3.0, ncols=2)
    x = np.arange(len(names))
    at.bar(x, t_rel, color="C0")
    ar.bar(x, r_rel, color="C1")
    for ax, label in ((at, "t_rel [%]"), (ar, "r_rel [deg/100 m]")):
        ax.set_xticks(x, names, rotation=30, ha="right")
        ax.set_ylabel(label)
    return _save(fig, path)


def plot_filter_scores(path, reports: Mapping[str, dict]) -> Path:
    """Precision and recall per denoising method (from ``FilterReport.as_dict``)."""
    fig, ax = _figure(5.0, 3.0)
    names = list(reports)
    x = np.arange(len(names))
    prec = [reports[n].get("precision") or 0.0 for n in names]
    rec = [reports[n].get("recall") or 0.0 for n in names]
    ax.bar(x - 0.2, prec, width=0.4, label="precision")
    ax.bar(x + 0.2, rec, width=0.4, label="recall")
    ax.set_xticks(x, names)
    ax.set_ylim(0, 1.05)
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_pair_errors(path, t_err: Sequence[float], r_err_deg: Sequence[float]) -> Path:
    fig, (at, ar) = _figure(7.0, 2.8, ncols=2)
    k = np.arange(1, len(t_err) + 1)
    at.plot(k, t_err, lw=1)
    ar.plot(k, r_err_deg, lw=1, color="C1")
    at.set_xlabel("pair")
    at.set_ylabel("translation error [m]")
    ar.set_xlabel("pair")
    ar.set_ylabel("rotation error [deg]")
    return _save(fig, path)
