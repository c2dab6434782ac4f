"""Figure rendering for run reports. Files only; never opens a window."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .report import HistogramExport  # noqa: E402

STYLE = {
    "axes.labelsize": 10,
    "font.size": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _new(width=4.5, height=None):
    golden = (np.sqrt(5.0) - 1.0) / 2.0
    return plt.subplots(figsize=(width, height or width * golden))


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_histogram(hist: HistogramExport, path, title: str = "") -> None:
    with plt.rc_context(STYLE):
        fig, ax = _new()
        edges = np.asarray(hist.bin_edges)
        ax.bar(edges[:-1], hist.counts, width=np.diff(edges), align="edge", color="C0", edgecolor="white", linewidth=0.4)
        ax.set_xlabel("reward")
        ax.set_ylabel("count")
        ax.set_xlim(edges[0], edges[-1])
        label = f"n={hist.n}, success={hist.success_rate:.2f}"
        ax.set_title(f"{title}\n{label}" if title else label, fontsize=9)
        _save(fig, path)


def plot_reward_curve(curve: np.ndarray, window: int, path, title: str = "") -> None:
    with plt.rc_context(STYLE):
        fig, ax = _new()
        steps = np.arange(window, window + len(curve))
        ax.plot(steps, curve, color="C0", linewidth=0.8)
        ax.axhline(0.0, color="0.6", linewidth=0.6, linestyle="--")
        ax.set_xlabel("real evaluation")
        ax.set_ylabel(f"mean reward (window {window})")
        if title:
            ax.set_title(title, fontsize=9)
        _save(fig, path)


def plot_cycle_histograms(per_cycle: list[np.ndarray], final: np.ndarray | None, path, lo: float = -4.0) -> None:
    """One small histogram per training cycle plus the final evaluation."""
    panels = list(per_cycle) + ([final] if final is not None else [])
    if not panels:
        return
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(panels), figsize=(1.8 * len(panels), 1.9), sharey=True, squeeze=False)
        edges = np.linspace(lo, 0.0, 41)
        for k, (ax, r) in enumerate(zip(axes[0], panels)):
            ax.hist(np.clip(r, lo, 0.0), bins=edges, color="C1" if final is not None and k == len(panels) - 1 else "C0")
            name = "final" if final is not None and k == len(panels) - 1 else f"cycle {k + 1}"
            ax.set_title(name, fontsize=8)
            ax.set_xlabel("reward", fontsize=8)
        axes[0][0].set_ylabel("count")
        _save(fig, path)
