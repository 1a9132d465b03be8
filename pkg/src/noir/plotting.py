"""Figures written next to the CSV/JSON reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 120,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    "font.size": 8,
    "axes.titlesize": 9,
    "axes.labelsize": 8,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "legend.fontsize": 7,
    "lines.linewidth": 1.0,
}

# PNG metadata would otherwise embed the matplotlib version
_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def plot_train_log(log, path, title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.6))
        epochs = np.arange(len(log.train_loss))
        ax.plot(epochs, log.train_loss, label="train")
        ax.plot(epochs, log.val_loss, label="validation")
        if log.best_epoch >= 0:
            ax.axvline(log.best_epoch, color="0.5", ls=":", lw=0.8)
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.set_title(title)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_latent_matrices(report, path) -> Path:
    """Mean pairwise latent MSE across samples, input and predicted output."""
    labels = report.resolutions.labels()
    mats = [np.mean([s.mse_in for s in report.samples], axis=0),
            np.mean([s.mse_out for s in report.samples], axis=0)]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(6.4, 2.8))
        for ax, m, name in zip(axes, mats, ("input latents", "predicted output latents")):
            im = ax.imshow(m, cmap="viridis")
            ax.set_xticks(range(len(labels)), labels, rotation=45)
            ax.set_yticks(range(len(labels)), labels)
            ax.set_title(f"pairwise MSE, {name}")
            for i in range(len(labels)):
                for j in range(len(labels)):
                    ax.text(j, i, f"{m[i, j]:.1e}", ha="center", va="center", fontsize=5, color="w")
            fig.colorbar(im, ax=ax, shrink=0.8)
        fig.tight_layout()
        return _save(fig, path)


def plot_metric_by_resolution(rows: list[dict], metric: str, labels: list[str], path) -> Path:
    data = [[r[metric] for r in rows if r["resolution"] == lab] for lab in labels]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.6))
        ax.boxplot(data, showmeans=True)
        ax.set_xticks(range(1, len(labels) + 1), labels)
        ax.set_xlabel("input resolution")
        ax.set_ylabel(metric.upper())
        return _save(fig, path)


def plot_ablation(rows: list[dict], path) -> Path:
    ops = list(dict.fromkeys(r["operator"] for r in rows))
    metrics = list(dict.fromkeys(r["metric"] for r in rows))
    width = 0.8 / max(len(ops), 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.6))
        x = np.arange(len(metrics))
        for k, op in enumerate(ops):
            vals = [next(r["value"] for r in rows if r["operator"] == op and r["metric"] == m) for m in metrics]
            ax.bar(x + k * width, vals, width, label=op)
        ax.set_xticks(x + width * (len(ops) - 1) / 2, [m.upper() for m in metrics])
        ax.legend(frameon=False)
        return _save(fig, path)
