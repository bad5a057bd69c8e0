"""Single-file SVG line charts.  Rendering never feeds back into numbers."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed ids and no date stamp, so identical data give identical files
matplotlib.rcParams["svg.hashsalt"] = "starspec"
matplotlib.rcParams["svg.fonttype"] = "none"


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_curve(curve, path):
    """Oriented (R, M) curve; arrows point toward increasing mu."""
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(curve.R, curve.M, "-", color="k", lw=1.2)
    n = len(curve.mus)
    for i in range(0, n - 1, max(1, n // 8)):
        ax.annotate("", xy=(curve.R[i + 1], curve.M[i + 1]), xytext=(curve.R[i], curve.M[i]),
                    arrowprops=dict(arrowstyle="->", color="k", lw=1.0))
    for e in curve.extrema:
        i = int(np.argmin(np.abs(np.log(curve.mus / e.mu_star))))
        ax.plot(curve.R[i], curve.M[i], "o", color="C3", ms=5)
        ax.annotate(f"{e.kind}, {e.bend}", (curve.R[i], curve.M[i]), fontsize=8,
                    textcoords="offset points", xytext=(6, 6))
    ax.set_xlabel("R")
    ax.set_ylabel("M")
    _save(fig, path)


def plot_profile(profile, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(profile.grid, profile.rho, color="k", lw=1.2, label="rho")
    ax.set_xlabel("r")
    ax.set_ylabel("rho")
    ax2 = ax.twinx()
    ax2.plot(profile.grid, profile.m, color="C0", lw=1.0)
    ax2.set_ylabel("m", color="C0")
    _save(fig, path)


def plot_series(t, columns, path, ylabel="", logy=True):
    """Several time series on one axis; ``columns`` maps label -> values."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    t = np.asarray(t, dtype=float)
    for label, y in columns.items():
        y = np.asarray(y, dtype=float)
        if logy:
            y = np.where(y > 0, y, np.nan)
        ax.plot(t, y, lw=1.1, label=label)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel(ylabel)
    ax.legend(frameon=False, fontsize=8)
    _save(fig, path)
