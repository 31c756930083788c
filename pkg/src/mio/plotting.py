"""Matplotlib figures for evaluation reports (rendered off-screen to files)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

REPORT_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.color": "#dddddd",
    "grid.linewidth": 0.6,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _limits(*trajs, margin=1.0):
    xy = np.vstack([t.positions()[:, :2] for t in trajs if t is not None and len(t)])
    lo = np.floor(xy.min(axis=0) - margin)
    hi = np.ceil(xy.max(axis=0) + margin)
    return (lo[0], hi[0]), (lo[1], hi[1])


def _setup_axes(ax, xlim, ylim, title):
    ax.set_xlim(*xlim)
    ax.set_ylim(*ylim)
    ax.set_aspect("equal")
    ax.set_xticks(np.arange(xlim[0], xlim[1] + 0.5, 1.0), minor=False)
    ax.set_yticks(np.arange(ylim[0], ylim[1] + 0.5, 1.0), minor=False)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(title)


def plot_trajectories(truth, est, baseline, path):
    """Two panels: (a) truth, dashed red; (b) estimate, solid blue, with the IMU-only baseline in grey."""
    xlim, ylim = _limits(truth, est)
    with plt.rc_context(REPORT_RC):
        fig, (ax_a, ax_b) = plt.subplots(1, 2, figsize=(9, 4))
        p = truth.positions()
        ax_a.plot(p[:, 0], p[:, 1], "--", color="#d62728", lw=1.5, label="ground truth")
        _setup_axes(ax_a, xlim, ylim, "(a) true trajectory")
        if baseline is not None and len(baseline):
            b = baseline.positions()
            ax_b.plot(b[:, 0], b[:, 1], "-", color="#7f7f7f", lw=1.0, label="IMU only")
        e = est.positions()
        ax_b.plot(e[:, 0], e[:, 1], "-", color="#1f77b4", lw=1.5, label="estimate")
        ax_b.plot(p[:, 0], p[:, 1], "--", color="#d62728", lw=0.8, alpha=0.5)
        _setup_axes(ax_b, xlim, ylim, "(b) estimation")
        ax_b.legend(loc="best")
        fig.savefig(path)
        plt.close(fig)


def plot_error_curve(times, errors, path):
    with plt.rc_context(REPORT_RC):
        fig, ax = plt.subplots(figsize=(6, 2.5))
        ax.plot(np.asarray(times) - times[0], errors, color="#1f77b4", lw=1.2)
        ax.set_xlabel("time [s]")
        ax.set_ylabel("position error [m]")
        fig.savefig(path)
        plt.close(fig)
