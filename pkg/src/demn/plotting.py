"""Figures written next to text reports (Agg backend, no display needed)."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .qa import ALL_MODES  # noqa: E402

# strip the version string so identical runs give identical bytes
_PNG_META = {"Software": None}


def plot_loss_curves(curves: Mapping[str, Sequence[float]], path, title: str = "training loss") -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, values in curves.items():
        ax.plot(range(1, len(values) + 1), values, marker=".", label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_title(title)
    if curves:
        ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def plot_ablation(records: Sequence[dict], path, title: str = "accuracy by ablation mode") -> Path:
    """Grouped bars: one group per mode in column order, one bar per variant (mean over seeds)."""
    modes = [m.value for m in ALL_MODES if any(r["mode"] == m.value for r in records)]
    variants = sorted({r["variant"] for r in records}, key=lambda v: (v != "DEMN w/o attn.", v))
    width = 0.8 / max(len(variants), 1)
    fig, ax = plt.subplots(figsize=(max(6, 1.1 * len(modes)), 4))
    for k, v in enumerate(variants):
        heights = []
        for m in modes:
            accs = [r["accuracy"] for r in records if r["variant"] == v and r["mode"] == m]
            heights.append(100.0 * sum(accs) / len(accs) if accs else 0.0)
        ax.bar([i + (k - (len(variants) - 1) / 2) * width for i in range(len(modes))], heights, width, label=v)
    ax.set_xticks(range(len(modes)))
    ax.set_xticklabels(modes, rotation=30)
    ax.set_ylabel("accuracy (%)")
    ax.set_ylim(0, 100)
    ax.axhline(20.0, color="gray", lw=0.8, ls="--")  # 5-way chance
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)
