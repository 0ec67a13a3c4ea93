"""Figures written next to the CSV/JSON reports.

Everything renders through the Agg backend with PNG metadata stripped, so a
rerun with the same inputs produces byte-identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "svg.hashsalt": "magnet",
}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_heatmap(coords: np.ndarray, values: np.ndarray, path: Path, title: str = "",
                 cmap: str = "viridis") -> Path:
    """Scatter each unit at its pixel coordinate, colored by ``values``."""
    coords = np.asarray(coords)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.6))
        sc = ax.scatter(coords[:, 0], coords[:, 1], c=values, s=28, marker="s", cmap=cmap, linewidths=0)
        ax.set_aspect("equal")
        ax.invert_yaxis()  # image convention: y grows downwards
        ax.set_xlabel("x (px)")
        ax.set_ylabel("y (px)")
        if title:
            ax.set_title(title)
        fig.colorbar(sc, ax=ax, shrink=0.85, label="predicted expression")
        fig.tight_layout()
        return _save(fig, path)


def plot_loss_curve(history: Sequence[dict], path: Path) -> Path:
    steps = [r["step"] for r in history]
    with plt.rc_context(STYLE):
        fig, (ax, ax_lr) = plt.subplots(2, 1, figsize=(4.8, 4.2), sharex=True,
                                        gridspec_kw={"height_ratios": [3, 1]})
        for key, label in (("L", "total"), ("L_p", "prediction"), ("L_c", "consistency")):
            ax.plot(steps, [r[key] for r in history], lw=1, label=label)
        ax.set_yscale("log")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        ax_lr.plot(steps, [r["lr"] for r in history], lw=1, color="0.3")
        ax_lr.set_ylabel("lr")
        ax_lr.set_xlabel("step")
        fig.tight_layout()
        return _save(fig, path)


def plot_gene_metrics(gene_names: Sequence[str], pcc: Sequence[float], path: Path, title: str = "") -> Path:
    """Per-gene PCC bars, genes in panel order; NaN (constant) genes left blank."""
    vals = np.array([np.nan if v is None else v for v in pcc], dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(3.0, 0.22 * len(vals) + 1.0), 2.8))
        ax.bar(np.arange(len(vals)), np.nan_to_num(vals), color=np.where(vals >= 0, "#3b6ea8", "#b5523b"))
        ax.axhline(0, color="0.2", lw=0.6)
        ax.set_xticks(np.arange(len(vals)))
        ax.set_xticklabels(gene_names, rotation=90)
        ax.set_ylim(-1, 1)
        ax.set_ylabel("PCC")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)
