"""Figures written next to the CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _figure(ncols=1, width=4.0, height=3.0):
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, ncols, figsize=(width * ncols, height))
    return fig, np.atleast_1d(axes)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def loss_curves(rows, path) -> None:
    """Per-epoch contrastive, clustering and total loss."""
    fig, (ax,) = _figure()
    if rows:
        epochs = [r[0] for r in rows]
        for col, label in ((1, "contrastive"), (2, "clustering"), (3, "total")):
            ax.plot(epochs, [r[col] for r in rows], marker="o", ms=2, label=label)
        ax.legend(frameon=False)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    _save(fig, path)


def lambda_sweep(rows, path) -> None:
    """L, dL/dlam and d2L/dlam2 against the smoothing exponent."""
    fig, axes = _figure(ncols=3, width=3.0)
    lams = [r[0] for r in rows]
    for ax, col, label in zip(axes, (1, 2, 3), ("L", "dL/dλ", "d²L/dλ²")):
        ax.plot(lams, [r[col] for r in rows], marker="o", ms=3, color="k")
        ax.set_xlabel("λ")
        ax.set_ylabel(label)
    _save(fig, path)


def ablation_heatmap(lambdas, gammas, values, path, label="KNN minority / macro F1") -> None:
    """Grid of mean scores with lambda on rows and gamma on columns."""
    fig, (ax,) = _figure(width=4.5, height=3.5)
    im = ax.imshow(np.asarray(values), cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(gammas)), [f"{g:g}" for g in gammas])
    ax.set_yticks(range(len(lambdas)), [f"{lam:g}" for lam in lambdas])
    ax.set_xlabel("γ (clustering weight)")
    ax.set_ylabel("λ (smoothing exponent)")
    for i in range(len(lambdas)):
        for j in range(len(gammas)):
            shade = im.norm(values[i][j])
            ax.text(j, i, f"{values[i][j]:.3f}", ha="center", va="center", fontsize=7,
                    color="black" if shade > 0.6 else "white")
    fig.colorbar(im, ax=ax, label=label)
    _save(fig, path)
