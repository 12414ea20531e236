"""Reproduction suites: desk-scale counterparts of the published tables.

Each suite chains the stage runners over a grid (fine-tune variants x
pruning amounts, attack flavors, seeds, ...) and emits one summary table as
CSV plus an aligned console printout.
"""

from __future__ import annotations

import csv
import dataclasses
import os

import numpy as np

from .errors import StageError
from .pipeline import (run_ablate, run_eval, run_finetune, run_pipeline,
                       run_pretrain, run_prune)
from .recipes import desk_mlp

SUITES = ("ablation-kd", "attack-compare", "loss-ablation", "pgd-sweep",
          "seed-stability", "negative-results", "boundary-distance")


def _write_summary(out_dir, header, rows):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "summary.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows
              else len(str(h)) for i, h in enumerate(header)]
    lines = ["  ".join(str(h).ljust(w) for h, w in zip(header, widths))]
    for row in rows:
        lines.append("  ".join(str(v).ljust(w) for v, w in zip(row, widths)))
    table = "\n".join(lines)
    print(table)
    return path


def _fmt(x):
    return f"{x:.2f}"


def suite_ablation_kd(seed, out_dir, targets=(0.90, 0.95, 0.99)):
    """Fine-tune variant grid in the shape of the published KD comparison."""
    rows = []
    for target in targets:
        base = desk_mlp(seed, os.path.join(out_dir, f"t{int(target * 100)}"),
                        target=target)
        run_pretrain(base)
        run_prune(base)
        run_finetune(base)
        ours = run_eval(base)
        rows.append([f"{target:.0%}", "modified-kd", _fmt(ours.eba), _fmt(ours.era)])
        for variant in ("vanilla-kd", "adversarial-kd"):
            rep = run_ablate(base, variant)
            rows.append([f"{target:.0%}", variant, _fmt(rep.eba), _fmt(rep.era)])
    _write_summary(out_dir, ["pruning", "fine-tune", "eba", "era"], rows)
    return rows


def suite_attack_compare(seed, out_dir, target=0.99):
    """Fine-tuning with the epsilon-cycling attack vs plain FGSM vs PGD."""
    base = desk_mlp(seed, os.path.join(out_dir, "base"), target=target)
    run_pretrain(base)
    run_prune(base)
    run_finetune(base)
    ours = run_eval(base)
    rows = [["fgsm-looping", _fmt(ours.eba), _fmt(ours.era)]]
    for variant in ("fgsm-finetune", "pgd-finetune"):
        rep = run_ablate(base, variant)
        rows.append([variant.replace("-finetune", ""), _fmt(rep.eba), _fmt(rep.era)])
    _write_summary(out_dir, ["attack", "eba", "era"], rows)
    return rows


def suite_loss_ablation(seed, out_dir, targets=(0.95, 0.99)):
    """Effect of dropping the accuracy term from the sparsification loss."""
    rows = []
    for target in targets:
        base = desk_mlp(seed, os.path.join(out_dir, f"t{int(target * 100)}"),
                        target=target)
        run_pretrain(base)
        run_prune(base)
        run_finetune(base)
        full = run_eval(base)
        ablated = run_ablate(base, "no-accuracy")
        conn = (ablated.connectivity or {}).get("connected")
        rows.append([f"{target:.0%}", "full", _fmt(full.eba), _fmt(full.era), ""])
        rows.append([f"{target:.0%}", "no-accuracy", _fmt(ablated.eba),
                     _fmt(ablated.era), "connected" if conn else "DISCONNECTED"])
    _write_summary(out_dir, ["pruning", "loss", "eba", "era", "structure"], rows)
    return rows


def suite_pgd_sweep(seed, out_dir, targets=(0.90, 0.95, 0.99)):
    """Robust accuracy under increasingly fine-grained attacks."""
    rows = []
    for target in targets:
        base = desk_mlp(seed, os.path.join(out_dir, f"t{int(target * 100)}"),
                        target=target)
        base.evaluate = dict(base.evaluate, sweep=True)
        run_pipeline(base)
        report = run_eval(base)
        sweep = report.sweep
        rows.append([f"{target:.0%}", *[_fmt(e) for e in sweep["era"]],
                     f"{sweep['std']:.3f}"])
    base_cfg = desk_mlp(seed, out_dir)
    steps = base_cfg.evaluate.get("sweep_steps", (10, 50, 100))
    _write_summary(out_dir,
                   ["pruning", *[f"steps={s}" for s in steps], "std"], rows)
    return rows


def suite_seed_stability(seed, out_dir, n_seeds=5, target=0.90):
    """Pipeline variance across seeds."""
    ebas, eras, rows = [], [], []
    for s in range(seed, seed + n_seeds):
        cfg = desk_mlp(s, os.path.join(out_dir, f"seed{s}"), target=target)
        report = run_pipeline(cfg)
        ebas.append(report.eba)
        eras.append(report.era)
        rows.append([s, _fmt(report.eba), _fmt(report.era)])
    rows.append(["mean", _fmt(float(np.mean(ebas))), _fmt(float(np.mean(eras)))])
    rows.append(["std", f"{np.std(ebas, ddof=1):.3f}", f"{np.std(eras, ddof=1):.3f}"])
    _write_summary(out_dir, ["seed", "eba", "era"], rows)
    return rows


def suite_negative_results(seed, out_dir):
    """Training from scratch at 99%, and iterative vs single-shot at 90%."""
    rows = []
    scratch_cfg = desk_mlp(seed, os.path.join(out_dir, "scratch"), target=0.99)
    scratch = run_ablate(scratch_cfg, "scratch")
    rows.append(["scratch-99%", _fmt(scratch.eba), _fmt(scratch.era)])
    single_cfg = desk_mlp(seed, os.path.join(out_dir, "single"), target=0.90)
    single = run_pipeline(single_cfg)
    rows.append(["single-shot-90%", _fmt(single.eba), _fmt(single.era)])
    iter_base = desk_mlp(seed, os.path.join(out_dir, "iterative"), target=0.90)
    run_pretrain(iter_base)
    iterative = run_ablate(iter_base, "iterative")
    rows.append(["iterative-90%", _fmt(iterative.eba), _fmt(iterative.era)])
    rows.append(["|single - iterative|",
                 _fmt(abs(single.eba - iterative.eba)),
                 _fmt(abs(single.era - iterative.era))])
    _write_summary(out_dir, ["mode", "eba", "era"], rows)
    return rows


def suite_boundary_distance(seed, out_dir, targets=(0.50, 0.90, 0.99)):
    """Mean distance score per correctness group across pruning amounts."""
    rows = []
    for target in targets:
        cfg = desk_mlp(seed, os.path.join(out_dir, f"t{int(target * 100)}"),
                       target=target)
        report = run_pipeline(cfg)
        stats = report.distance_stats
        row = [f"{target:.0%}"]
        for group in ("benign-correct", "benign-wrong", "adv-correct",
                      "adv-wrong"):
            g = stats.get(group, {})
            row.append(_fmt(g["distance_score"]) if g.get("count") else "n/a")
        rows.append(row)
    _write_summary(out_dir, ["pruning", "benign-correct", "benign-wrong",
                             "adv-correct", "adv-wrong"], rows)
    return rows


def run_reproduce(suite: str, seed: int, out_dir: str):
    runner = {
        "ablation-kd": suite_ablation_kd,
        "attack-compare": suite_attack_compare,
        "loss-ablation": suite_loss_ablation,
        "pgd-sweep": suite_pgd_sweep,
        "seed-stability": suite_seed_stability,
        "negative-results": suite_negative_results,
        "boundary-distance": suite_boundary_distance,
    }.get(suite)
    if runner is None:
        raise StageError(f"unknown suite {suite!r}; choose from {SUITES}")
    return runner(seed, out_dir)
