"""Figure defaults for report plots (file output only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

golden_mean = (np.sqrt(5) - 1.0) / 2.0
fig_width = 4.5
fig_size = [fig_width, fig_width * golden_mean]
colors = ["#08589e", "#d95f02", "#1b9e77", "#7570b3", "#e7298a", "#66a61e", "#a6761d"]

params = {
    "axes.prop_cycle": matplotlib.cycler(color=colors),
    "axes.labelsize": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 8,
    "legend.fontsize": 7,
    "legend.frameon": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.figsize": fig_size,
    "figure.dpi": 150,
    "lines.linewidth": 1.2,
    "lines.markersize": 3.5,
    "savefig.bbox": "tight",
}

LABELS = {
    "eps_frame": "frame error (mm)",
    "eps_acc": "accumulated error (mm)",
    "eps_dice": "volume overlap (Dice)",
    "eps_drift": "final drift (mm)",
}


def figure():
    with matplotlib.rc_context(params):
        return plt.subplots()


def save(fig, path) -> None:
    with matplotlib.rc_context(params):
        fig.savefig(path)
    plt.close(fig)
