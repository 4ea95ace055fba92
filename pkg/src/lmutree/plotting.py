"""Report figures: learning curves, feature influence and super-pixel masks."""

from __future__ import annotations

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
}


def _save(fig, path):
    # no date or software stamps so reruns give identical files
    fig.savefig(path, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def learning_curve(curves: dict, path, metric="rae", title=None):
    """Plot prequential error against absorbed transitions, one line per label."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        for label, curve in curves.items():
            pts = [(p.transitions, getattr(p, metric)) for p in curve if getattr(p, metric) is not None]
            if pts:
                x, y = zip(*pts)
                ax.plot(x, y, lw=1.2, label=label)
        ax.set_xlabel("transitions")
        ax.set_ylabel(metric.upper())
        if title:
            ax.set_title(title)
        if len(curves) > 1:
            ax.legend(frameon=False)
        return _save(fig, path)


def influence_bars(table, path, top=20, title="Feature influence"):
    rows = table.rows(nonzero_only=True)[:top]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 0.3 * max(len(rows), 2) + 0.8))
        if rows:
            names, vals = zip(*rows)
            y = np.arange(len(rows))
            ax.barh(y, vals, color="0.35")
            ax.set_yticks(y)
            ax.set_yticklabels(names)
            ax.invert_yaxis()
        ax.set_xlabel("influence")
        ax.set_title(title)
        return _save(fig, path)


def superpixel_figure(obs, mask, path, title=None):
    """Frames side by side with highlighted pixels outlined in red.

    ``obs`` and ``mask`` are (frames, rows, cols) arrays; frame 0 is the most recent.
    """
    obs = np.asarray(obs, dtype=float)
    mask = np.asarray(mask) > 0
    frames = obs.shape[0]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, frames, figsize=(1.6 * frames, 1.9))
        for k, ax in enumerate(np.atleast_1d(axes)):
            ax.imshow(obs[k], cmap="gray_r", vmin=0, vmax=1, interpolation="nearest")
            rows, cols = np.nonzero(mask[k])
            ax.scatter(cols, rows, s=30, facecolors="none", edgecolors="red", linewidths=0.9)
            ax.set_title(f"t-{k}" if k else "t")
            ax.set_xticks([])
            ax.set_yticks([])
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def play_bars(results: dict, path, title="Average return per episode"):
    """Bar chart of ARPE by model name."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.5, 2.6))
        names = list(results)
        ax.bar(names, [results[n] for n in names], color="0.45")
        ax.set_ylabel("ARPE")
        ax.set_title(title)
        return _save(fig, path)
