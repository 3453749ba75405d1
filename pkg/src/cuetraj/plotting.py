"""SVG figures: prediction overlays, attention heatmaps and metric bars.

Figures are rendered off-screen with the Agg canvas and saved as SVG with
a fixed hash salt and no date stamp, so identical inputs give identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "svg.fonttype": "none",
    "svg.hashsalt": "cuetraj",
}

COLORS = {"observed": "#1f77b4", "truth": "#2ca02c", "prediction": "#d62728",
          "neighbor": "#7f7f7f"}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def trajectory_svg(path, observed: np.ndarray, truth: np.ndarray, prediction: np.ndarray,
                   neighbors=(), title: str = "") -> Path:
    """Overlay of one scene: observed track, ground truth, prediction, neighbours.

    ``observed`` may contain NaN rows for unavailable steps; they are skipped.
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        for i, track in enumerate(neighbors):
            track = np.asarray(track)
            ax.plot(track[:, 0], track[:, 1], "--", color=COLORS["neighbor"], lw=1,
                    label="neighbors" if i == 0 else None)
            ax.plot(track[-1:, 0], track[-1:, 1], "o", color=COLORS["neighbor"], ms=3)
        obs = np.asarray(observed)
        obs = obs[np.isfinite(obs).all(axis=1)]
        ax.plot(obs[:, 0], obs[:, 1], "-o", color=COLORS["observed"], ms=3, label="observed")
        last = obs[-1:] if len(obs) else np.zeros((1, 2))
        for name, fut in (("truth", truth), ("prediction", prediction)):
            fut = np.concatenate([last, np.asarray(fut)])
            ax.plot(fut[:, 0], fut[:, 1], "-", marker=".", color=COLORS[name], lw=1.5,
                    label="ground truth" if name == "truth" else name)
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        if title:
            ax.set_title(title)
        ax.legend(loc="best", fontsize=7)
        return _save(fig, path)


def heatmap_svg(path, values: np.ndarray, xlabels, ylabels, title: str = "",
                cmap: str = "viridis") -> Path:
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    with plt.rc_context(STYLE):
        h, w = values.shape
        fig, ax = plt.subplots(figsize=(max(2.5, 0.5 * w + 1.5), max(1.5, 0.3 * h + 1.0)))
        im = ax.imshow(values, cmap=cmap, aspect="auto", vmin=0.0)
        ax.set_xticks(range(w), list(xlabels), rotation=45 if w > 6 else 0, ha="right"
                      if w > 6 else "center")
        ax.set_yticks(range(h), list(ylabels))
        fig.colorbar(im, ax=ax, fraction=0.05)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def metric_bars_svg(path, names, ade, fde, title: str = "") -> Path:
    """Grouped ADE/FDE bars, one group per run."""
    x = np.arange(len(names))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(3.5, 0.9 * len(names) + 1.5), 3))
        ax.bar(x - 0.2, ade, 0.4, label="ADE")
        ax.bar(x + 0.2, fde, 0.4, label="FDE")
        ax.set_xticks(x, list(names), rotation=30 if len(names) > 3 else 0,
                      ha="right" if len(names) > 3 else "center")
        ax.set_ylabel("error (scene units)")
        if title:
            ax.set_title(title)
        ax.legend()
        return _save(fig, path)


def loss_curve_svg(path, epochs, train_loss, val_ade=None) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        ax.plot(epochs, train_loss, "-o", ms=3, label="train MSE")
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        if val_ade is not None and any(v is not None for v in val_ade):
            ax2 = ax.twinx()
            pts = [(e, v) for e, v in zip(epochs, val_ade) if v is not None]
            ax2.plot(*zip(*pts), "-s", ms=3, color="#d62728", label="val ADE")
            ax2.set_ylabel("val ADE")
        ax.legend(loc="upper right")
        return _save(fig, path)
