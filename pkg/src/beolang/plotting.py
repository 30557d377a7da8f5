"""Report figures written next to the results files."""

from __future__ import annotations

import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def retrieval_figure(records, path):
    """Top-1/top-2 per condition with the shuffled-description baseline."""
    names = [r["condition"] for r in records]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(x - 0.2, [r["top1"] for r in records], 0.4, label="top-1")
    ax.bar(x + 0.2, [r["top2"] for r in records], 0.4, label="top-2")
    if all("shuffled_top1" in r for r in records):
        ax.scatter(x - 0.2, [r["shuffled_top1"] for r in records], color="k", marker="_", s=300,
                   label="shuffled top-1", zorder=3)
        ax.scatter(x + 0.2, [r["shuffled_top2"] for r in records], color="0.4", marker="_", s=300,
                   label="shuffled top-2", zorder=3)
    ax.axhline(1 / 3, color="k", lw=0.6, ls=":")
    ax.set_xticks(x, names)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("accuracy")
    ax.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def attribute_figure(records, path):
    attrs = list(records[0]["attribute_f1"])
    x = np.arange(len(attrs))
    width = 0.8 / len(records)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for i, r in enumerate(records):
        ax.bar(x + (i - (len(records) - 1) / 2) * width, [r["attribute_f1"][a] for a in attrs], width,
               label=r["condition"])
    ax.set_xticks(x, attrs)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("F1")
    ax.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def training_figure(log_path, path):
    """Regressor loss and joint dev accuracy per epoch, from the JSONL log."""
    if not os.path.exists(log_path):
        return False
    series = {}
    with open(log_path, encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            if "epoch" in rec:
                series.setdefault(rec["stage"], []).append(rec)
    if not series:
        return False
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.5))
    for stage, recs in series.items():
        ep = [r["epoch"] for r in recs]
        if stage == "regressor":
            ax0.plot(ep, [r["loss"] for r in recs], label=stage)
        else:
            ax1.plot(ep, [r["dev_top1"] for r in recs], label=stage.split(":", 1)[-1])
    ax0.set_yscale("log")
    ax0.set_xlabel("epoch")
    ax0.set_ylabel("regressor MSE")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("dev top-1")
    for ax in (ax0, ax1):
        if ax.lines:
            ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return True


def write_figures(records, out_dir, log_path=None):
    os.makedirs(out_dir, exist_ok=True)
    paths = [os.path.join(out_dir, "retrieval.png"), os.path.join(out_dir, "attributes.png")]
    retrieval_figure(records, paths[0])
    attribute_figure(records, paths[1])
    if log_path:
        p = os.path.join(out_dir, "training.png")
        if training_figure(log_path, p):
            paths.append(p)
    return paths
