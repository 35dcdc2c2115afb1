"""Static figures for run reports: likelihood/ARI profiles and segmentations."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .gibbs import GibbsTrace  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    # fixed metadata keeps the output reproducible
    "svg.hashsalt": "npbdaa",
}


def _stack(traces: Sequence[GibbsTrace], attr: str):
    n = min(len(t) for t in traces)
    its = np.asarray(traces[0].iteration[:n])
    vals = np.array([[np.nan if v is None else v for v in getattr(t, attr)[:n]] for t in traces],
                    dtype=float)
    return its, vals


def _band(ax, its, vals, label, color=None):
    mean = np.nanmean(vals, axis=0)
    sd = np.nanstd(vals, axis=0)
    line, = ax.plot(its, mean, label=label, color=color, lw=1.2)
    ax.fill_between(its, mean - sd, mean + sd, color=line.get_color(), alpha=0.2, lw=0)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None} if str(path).endswith(".png") else None)
    plt.close(fig)


def plot_loglik_profile(traces: Sequence[GibbsTrace], path, title: str = "") -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        its, vals = _stack(traces, "log_likelihood")
        _band(ax, its, vals, f"mean ± sd ({len(traces)} trials)")
        ax.set_xlabel("iteration")
        ax.set_ylabel("joint log-likelihood")
        if title:
            ax.set_title(title)
        ax.legend(loc="lower right", frameon=False)
        _save(fig, path)


def plot_ari_profile(traces: Sequence[GibbsTrace], path, title: str = "") -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for attr, label in (("letter_ari", "letters"), ("word_ari", "words")):
            its, vals = _stack(traces, attr)
            if np.all(np.isnan(vals)):
                continue
            _band(ax, its, vals, label)
        ax.set_xlabel("iteration")
        ax.set_ylabel("ARI")
        ax.set_ylim(-0.05, 1.05)
        if title:
            ax.set_title(title)
        ax.legend(loc="lower right", frameon=False)
        _save(fig, path)


def plot_segmentation(frames: np.ndarray, rows: Sequence[tuple[str, np.ndarray]], path,
                      title: str = "") -> None:
    """Observations on top, then one color strip per labeling in ``rows``."""
    frames = np.atleast_2d(np.asarray(frames))
    if frames.shape[0] == 1:
        frames = frames.T
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(rows) + 1, 1, sharex=True,
                                 figsize=(6.0, 1.0 + 0.6 * len(rows) + 1.2),
                                 gridspec_kw={"height_ratios": [3] + [1] * len(rows)})
        axes[0].plot(frames, lw=0.8)
        axes[0].set_ylabel("feature")
        if title:
            axes[0].set_title(title)
        for ax, (name, labels) in zip(axes[1:], rows):
            ax.imshow(np.asarray(labels)[None, :], aspect="auto", cmap="tab10",
                      interpolation="nearest", vmin=0, vmax=9,
                      extent=(-0.5, len(labels) - 0.5, 0, 1))
            ax.set_yticks([])
            ax.set_ylabel(name, rotation=0, ha="right", va="center")
        axes[-1].set_xlabel("frame")
        _save(fig, path)
