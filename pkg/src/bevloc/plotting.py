"""Figures from ablation result files (matplotlib, Agg backend)."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

LABELS = {"drone": "drone frames", "bev": "BEV", "two_stage_in_batch": "two-stage\n(in-batch)",
          "two_stage_synthetic": "two-stage\n(synthetic)", "freeze": "Freeze", "fine_tune": "Fine-tune",
          "train_together": "Train-together", "video": "video query", "single_frame": "single-frame query"}


def bar_chart(mean_ap: dict, path: Path, title: str) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    names = list(mean_ap)
    vals = [100 * mean_ap[n] for n in names]
    ax.bar(range(len(names)), vals, color="#4c72b0")
    ax.set_xticks(range(len(names)), [LABELS.get(n, n) for n in names], fontsize=8)
    ax.set_ylabel("AP (%)")
    ax.set_ylim(max(0, min(vals) - 10), 100)
    ax.set_title(title, fontsize=10)
    for i, v in enumerate(vals):
        ax.text(i, v + 0.3, f"{v:.1f}", ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def topk_curve(mean_ap: dict, path: Path) -> Path:
    ks = sorted(int(k) for k in mean_ap)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(ks, [100 * mean_ap[str(k)] for k in ks], marker="o")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("re-ranked top-k")
    ax.set_ylabel("AP (%)")
    ax.set_title("Re-ranking depth", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_directory(results: Path, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    done = []
    titles = {"a": "Input and stage-2 ablation", "b": "Training strategies", "robustness": "Image vs video query"}
    for table, title in titles.items():
        f = results / f"ablation_{table}.json"
        if f.exists():
            done.append(bar_chart(json.loads(f.read_text())["mean_ap"], out / f"ablation_{table}.png", title))
    f = results / "ablation_c.json"
    if f.exists():
        done.append(topk_curve(json.loads(f.read_text())["mean_ap"], out / "ablation_c.png"))
    return done
