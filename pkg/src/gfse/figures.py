"""Report figures rendered to PNG files.

Everything uses the non-interactive Agg backend so rendering works in
headless environments. Each function writes one file atomically (temp file
plus rename) and returns the final path.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .model import TASKS

_TASK_COLORS = {"spd": "tab:blue", "mc": "tab:orange", "cd": "tab:green",
                "gcl": "tab:red"}


def _save(fig, path: str) -> str:
    tmp = path + ".tmp"
    fig.savefig(tmp, format="png", dpi=110, bbox_inches="tight")
    plt.close(fig)
    os.replace(tmp, path)
    return path


def loss_curves(history: list[dict], path: str) -> str:
    """Per-task and combined loss against epoch."""
    epochs = [row["epoch"] for row in history]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for t in TASKS:
        ax.plot(epochs, [row[f"loss_{t}"] for row in history],
                color=_TASK_COLORS[t], label=f"loss {t}")
    ax.plot(epochs, [row["loss_total"] for row in history],
            color="black", linewidth=2, label="combined")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def uncertainty_curves(history: list[dict], path: str) -> str:
    """Learned per-task variance against epoch, log scale."""
    epochs = [row["epoch"] for row in history]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for t in TASKS:
        ax.plot(epochs, [row[f"sigma2_{t}"] for row in history],
                color=_TASK_COLORS[t], label=f"sigma^2 {t}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("task variance")
    ax.set_yscale("log")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def metric_curves(history: list[dict], path: str) -> str:
    """Accuracies on the left axis, error metrics on the right."""
    epochs = [row["epoch"] for row in history]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(epochs, [row["acc_cd"] for row in history],
            color="tab:green", label="acc cd")
    ax.plot(epochs, [row["acc_gcl"] for row in history],
            color="tab:red", label="acc gcl")
    ax.set_xlabel("epoch")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0.0, 1.05)
    ax2 = ax.twinx()
    ax2.plot(epochs, [row["mse_spd"] for row in history],
             color="tab:blue", linestyle="--", label="mse spd")
    ax2.plot(epochs, [row["mae_mc"] for row in history],
             color="tab:orange", linestyle="--", label="mae mc")
    ax2.set_ylabel("error")
    ax2.set_yscale("log")
    h1, l1 = ax.get_legend_handles_labels()
    h2, l2 = ax2.get_legend_handles_labels()
    ax.legend(h1 + h2, l1 + l2, loc="best", fontsize=8)
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def training_figures(history: list[dict], out_dir: str,
                     stem: str = "training") -> list[str]:
    if not history:
        raise ValueError("empty history")
    paths = [
        loss_curves(history, os.path.join(out_dir, f"{stem}_losses.png")),
        uncertainty_curves(history,
                           os.path.join(out_dir, f"{stem}_uncertainty.png")),
        metric_curves(history, os.path.join(out_dir, f"{stem}_metrics.png")),
    ]
    return paths


def bucket_histogram(bucket_sizes, path: str, title: str = "") -> str:
    """Distribution of signature-bucket sizes from a refinement report."""
    sizes = list(bucket_sizes)
    if not sizes:
        raise ValueError("empty bucket list")
    counts: dict[int, int] = {}
    for s in sizes:
        counts[s] = counts.get(s, 0) + 1
    xs = sorted(counts)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([str(x) for x in xs], [counts[x] for x in xs], color="tab:blue")
    ax.set_xlabel("graphs per signature bucket")
    ax.set_ylabel("buckets")
    if title:
        ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.3)
    return _save(fig, path)
