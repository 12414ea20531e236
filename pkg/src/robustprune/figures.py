"""Figure rendering for run reports.

Every report directory gets PNG companions next to the delimited output:
training traces, per-layer sparsity bars, boundary-distance bars, and the
attack-strength sweep. Rendering is headless (Agg) and file-only.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_prune_trace(trace, path):
    epochs = trace.column("epoch")
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    axes[0].plot(epochs, trace.column("loss"), label="loss")
    axes[0].plot(epochs, trace.column("adv_proxy"), label="boundary proxy")
    axes[0].set_xlabel("epoch")
    axes[0].legend(fontsize=8)
    axes[0].set_title("objective terms", fontsize=9)
    axes[1].plot(epochs, trace.column("lambda_a"), label="lambda_a")
    axes[1].plot(epochs, trace.column("lambda_p"), label="lambda_p")
    axes[1].set_xlabel("epoch")
    axes[1].legend(fontsize=8)
    axes[1].set_title("multipliers", fontsize=9)
    ax2 = axes[2]
    ax2.plot(epochs, trace.column("sparsity"), color="tab:green")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("soft sparsity")
    ax2.set_ylim(0, 1)
    twin = ax2.twinx()
    twin.plot(epochs, trace.column("prune_proxy"), color="tab:red", alpha=0.6)
    twin.set_ylabel("capacity violation", color="tab:red")
    ax2.set_title("sparsification", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_finetune_trace(trace, path):
    epochs = trace.column("epoch")
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    for name in ("hard", "soft", "atk", "total"):
        axes[0].plot(epochs, trace.column(name), label=name)
    axes[0].set_xlabel("epoch")
    axes[0].legend(fontsize=8)
    axes[0].set_title("loss terms", fontsize=9)
    axes[1].plot(epochs, trace.column("val_eba"), label="val eba")
    era = np.asarray(trace.column("val_era"), dtype=float)
    if np.isfinite(era).any():
        axes[1].plot(epochs, era, label="val era")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("accuracy [%]")
    axes[1].legend(fontsize=8)
    axes[1].set_title("validation", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_per_layer(per_layer, path):
    names = [row[0] for row in per_layer]
    values = [row[1] for row in per_layer]
    fig, ax = plt.subplots(figsize=(max(4, 0.8 * len(names)), 3.2))
    ax.bar(names, values, color="tab:blue")
    ax.set_ylabel("pruned [%]")
    ax.set_ylim(0, 100)
    for i, v in enumerate(values):
        ax.text(i, v + 1, f"{v:.1f}", ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_distance(stats, path):
    groups = ["benign-correct", "benign-wrong", "adv-correct", "adv-wrong"]
    present = [g for g in groups if stats.get(g, {}).get("count", 0) > 0]
    scores = [stats[g]["distance_score"] for g in present]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    colors = ["tab:green" if "correct" in g else "tab:red" for g in present]
    ax.bar(present, scores, color=colors)
    ax.set_ylabel("distance score")
    ax.set_ylim(0, 1)
    plt.xticks(rotation=20, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_sweep(sweep, path):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(sweep["steps"], sweep["era"], marker="o")
    ax.set_xlabel("attack steps")
    ax.set_ylabel("era [%]")
    ax.set_xscale("log")
    ax.set_title(f"eps={sweep['epsilon_max']:.4g}, std={sweep['std']:.3f}",
                 fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_report_figures(out_dir, report, prune_trace=None,
                          finetune_trace=None):
    """Render whatever figures the available report pieces support."""
    import os

    made = []
    if report.per_layer:
        path = os.path.join(out_dir, "per_layer.png")
        plot_per_layer(report.per_layer, path)
        made.append(path)
    if report.distance_stats:
        path = os.path.join(out_dir, "distance.png")
        plot_distance(report.distance_stats, path)
        made.append(path)
    if report.sweep:
        path = os.path.join(out_dir, "sweep.png")
        plot_sweep(report.sweep, path)
        made.append(path)
    if prune_trace is not None and prune_trace.records:
        path = os.path.join(out_dir, "prune_trace.png")
        plot_prune_trace(prune_trace, path)
        made.append(path)
    if finetune_trace is not None and finetune_trace.records:
        path = os.path.join(out_dir, "finetune_trace.png")
        plot_finetune_trace(finetune_trace, path)
        made.append(path)
    return made
