"""Render the report CSVs to PNG files next to them."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def render_run(fig_dir) -> list[str]:
    """Plot progression, layer sparsity and weight histogram CSVs."""
    fig_dir = Path(fig_dir)
    out = []
    out.append(_render_progression(fig_dir / "progression.csv"))
    out.append(_render_layers(fig_dir / "layer_sparsity.csv"))
    out.append(_render_hist(fig_dir / "weight_hist.csv"))
    return out


def _render_progression(path: Path) -> str:
    rows = _read_csv(path)
    steps = range(len(rows))
    xe = [float(r["xe_loss"]) for r in rows]
    ws = [float(r["weighted_sparsity_loss"]) for r in rows]
    sparsity = [float(r["sparsity"]) for r in rows]
    gate = [float(r["gate_mean"]) if r["gate_mean"] != "" else None for r in rows]

    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
    axes[0].plot(steps, xe, lw=0.8, label="task loss")
    axes[0].plot(steps, ws, lw=0.8, label="weighted sparsity loss")
    axes[0].set_ylabel("loss")
    axes[0].legend(frameon=False)
    if any(g is not None for g in gate):
        axes[1].plot(steps, [g if g is not None else float("nan") for g in gate], lw=0.8)
    axes[1].set_ylabel("gating average")
    axes[2].plot(steps, sparsity, lw=0.8)
    axes[2].set_ylabel("sparsity")
    axes[2].set_xlabel("step")
    for ax in axes:
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)
    fig.tight_layout()
    png = path.with_suffix(".png")
    fig.savefig(png, dpi=120)
    plt.close(fig)
    return str(png)


def _render_layers(path: Path) -> str:
    rows = _read_csv(path)
    names = [r["layer"] for r in rows]
    vals = [float(r["sparsity"]) for r in rows]
    fig, ax = plt.subplots(figsize=(7, 0.35 * len(names) + 1.5))
    ax.barh(range(len(names)), vals, color="#4878a8")
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("sparsity")
    ax.set_xlim(0, 1)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    png = path.with_suffix(".png")
    fig.savefig(png, dpi=120)
    plt.close(fig)
    return str(png)


def _render_hist(path: Path) -> str:
    rows = _read_csv(path)
    lefts = [float(r["bin_left"]) for r in rows]
    rights = [float(r["bin_right"]) for r in rows]
    counts = [int(r["count"]) for r in rows]
    centers = [(l + r) / 2 for l, r in zip(lefts, rights)]
    widths = [r - l for l, r in zip(lefts, rights)]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(centers, counts, width=widths, color="#a85448")
    ax.set_xlabel("nonzero weight value")
    ax.set_ylabel("count")
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    fig.tight_layout()
    png = path.with_suffix(".png")
    fig.savefig(png, dpi=120)
    plt.close(fig)
    return str(png)
