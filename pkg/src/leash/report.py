"""Figures for training runs, written next to the metrics CSV."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from leash.trainer import IterationMetrics  # noqa: E402

# fixed ids and no timestamp keep reruns byte-identical
_RC = {"svg.hashsalt": "leash", "svg.fonttype": "none", "font.size": 9, "axes.grid": True, "grid.alpha": 0.3}
_META = {"Date": None, "Creator": None}

DYNAMICS_PANELS = (
    ("satisfaction_rate", "satisfaction rate"),
    ("lam", "lambda"),
    ("effective_penalty", "effective penalty"),
    ("mean_length", "mean length"),
)


def _series(metrics: Sequence[IterationMetrics], attr: str) -> tuple[list[int], list[float]]:
    return [m.iteration for m in metrics], [getattr(m, attr) for m in metrics]


def plot_dynamics(
    runs: Mapping[str, Sequence[IterationMetrics]],
    path: str | Path,
    target_length: int | None = None,
) -> Path:
    """Four panels: satisfaction rate, lambda, effective penalty, mean length."""
    path = Path(path)
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, 4, figsize=(13, 3.0))
        for ax, (attr, title) in zip(axes, DYNAMICS_PANELS):
            for label, metrics in runs.items():
                ax.plot(*_series(metrics, attr), lw=1.0, label=label)
            ax.set_title(title)
            ax.set_xlabel("iteration")
        if target_length is not None:
            axes[3].axhline(target_length, color="k", ls="--", lw=0.8)
        if len(runs) > 1:
            axes[0].legend(frameon=False, fontsize=7)
        fig.tight_layout()
        fig.savefig(path, format=path.suffix.lstrip(".") or "svg", metadata=_META)
        plt.close(fig)
    return path


def plot_length_accuracy(runs: Mapping[str, Sequence[IterationMetrics]], path: str | Path) -> Path:
    path = Path(path)
    with plt.rc_context(_RC):
        fig, (ax_len, ax_acc) = plt.subplots(1, 2, figsize=(8, 3.0))
        for label, metrics in runs.items():
            ax_len.plot(*_series(metrics, "mean_length"), lw=1.0, label=label)
            ax_acc.plot(*_series(metrics, "mean_accuracy"), lw=1.0, label=label)
        ax_len.set_title("mean length")
        ax_acc.set_title("accuracy")
        for ax in (ax_len, ax_acc):
            ax.set_xlabel("iteration")
        ax_len.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        fig.savefig(path, format=path.suffix.lstrip(".") or "svg", metadata=_META)
        plt.close(fig)
    return path


def plot_behavior(stats_by_label: Mapping[str, Mapping[str, float]], path: str | Path) -> Path:
    """Grouped bars of mean marker counts."""
    path = Path(path)
    labels = list(stats_by_label)
    groups = sorted({g for s in stats_by_label.values() for g in s})
    width = 0.8 / max(len(labels), 1)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.0))
        for i, label in enumerate(labels):
            xs = [j + i * width for j in range(len(groups))]
            ax.bar(xs, [stats_by_label[label].get(g, 0.0) for g in groups], width, label=label)
        ax.set_xticks([j + 0.4 - width / 2 for j in range(len(groups))], groups)
        ax.set_ylabel("mean count per sample")
        if len(labels) > 1:
            ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        fig.savefig(path, format=path.suffix.lstrip(".") or "svg", metadata=_META)
        plt.close(fig)
    return path
