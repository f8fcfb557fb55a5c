"""Figure rendering for simulation reports.

Every CLI run that writes delimited output can also render the matching
matplotlib figures next to it: space-time heatmaps of the density and the
control, the terminal density profile, and the method comparison chart.
All functions write PNG files and return the path.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_heatmap",
    "save_final_state",
    "save_compare_chart",
]

_CMAP = "inferno"


def _new_axes(width=6.0, height=3.6):
    fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def save_heatmap(times, x_centers, values, path, label, title=None):
    """Space-time heatmap of a field sampled as values[k, i] at times[k]."""
    fig, ax = _new_axes()
    t = np.asarray(times)
    x = np.asarray(x_centers)
    mesh = ax.pcolormesh(x, t, np.asarray(values), cmap=_CMAP, shading="nearest")
    fig.colorbar(mesh, ax=ax, label=label)
    ax.set_xlabel("x")
    ax.set_ylabel("t")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_final_state(x_centers, profiles, path, title=None):
    """Terminal density profiles; ``profiles`` maps label -> values."""
    fig, ax = _new_axes()
    for label, vals in profiles.items():
        ax.plot(x_centers, vals, label=label, lw=1.4)
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    ax.legend(frameon=False)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_compare_chart(costs, path, title=None):
    """Bar chart of total cost per method; ``costs`` maps method -> J."""
    fig, ax = _new_axes(width=4.8)
    methods = list(costs)
    vals = [costs[m] for m in methods]
    ax.bar(methods, vals, color="#30527a")
    for i, v in enumerate(vals):
        ax.text(i, v, f"{v:.4f}", ha="center", va="bottom", fontsize=9)
    ax.set_ylabel("J")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
