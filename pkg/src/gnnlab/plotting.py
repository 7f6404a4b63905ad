"""PNG figures written next to the CSV reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_accuracy_curves(curves: dict[str, np.ndarray], path, title: str = "", ylabel: str = "test accuracy") -> Path:
    """One line per labeled per-epoch series."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, ys in curves.items():
        ys = np.asarray(ys, dtype=float)
        ax.plot(np.arange(1, ys.size + 1), ys, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_tv_vs_n(rows: list[dict], path, title: str = "") -> Path:
    """Per-seed TV distances (dots) and their mean (line) against n on log axes."""
    ns = sorted({r["n"] for r in rows})
    fig, ax = plt.subplots(figsize=(5, 4))
    for r in rows:
        ax.plot(r["n"], r["tv_distance"], "o", color="0.6", ms=3)
    means = [np.mean([r["tv_distance"] for r in rows if r["n"] == n]) for n in ns]
    ax.plot(ns, means, "-o", color="C0", label="mean over seeds")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("TV distance to reference")
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3, which="both")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
