"""Stage runners binding data, models, engines, and reports.

Each stage reads its predecessor's checkpoint from the run directory and
leaves behind: the resolved config snapshot, its checkpoint, trace CSVs, a
JSON report with CSV companions, and rendered figures. Stage order is
enforced by checkpoint presence and recorded stage tags.
"""

from __future__ import annotations

import dataclasses
import os
import time

import numpy as np

from .attacks import AttackSpec, attack_throughput, perturb_looping
from .config import ExperimentConfig, build_network
from .data import dataset_from_config, split
from .errors import StageError
from .evaluate import (EvalReport, boundary_distance_stats, evaluate_eba,
                       evaluate_era, pgd_strength_sweep, save_report)
from .figures import plot_finetune_trace, plot_prune_trace, render_report_figures
from .finetune import FineTuneConfig, FineTuneTrace, fine_tune
from .losses import cross_entropy
from .model import (BinaryMask, MaskedModel, Network, load_checkpoint,
                    save_checkpoint)
from .pruning import (PruneTrace, ablate_no_accuracy, connectivity_check,
                      per_layer_sparsity, prune, prune_lwm_baseline,
                      target_retained)
from .tensor import Adam, Tensor

PRETRAINED = "pretrained.dwd"
PRUNED = "pruned.dwd"
FINETUNED = "finetuned.dwd"


def load_experiment_data(cfg: ExperimentConfig):
    ds = dataset_from_config(cfg.dataset, cfg.seed)
    fractions = tuple(cfg.dataset.get("split", (0.8, 0.0, 0.2)))
    train, _, test = split(ds, fractions, int(cfg.dataset.get("split_seed", cfg.seed)))
    return train, (test if test is not None else train)


def _prepare_dir(cfg: ExperimentConfig):
    os.makedirs(cfg.out_dir, exist_ok=True)
    cfg.snapshot(os.path.join(cfg.out_dir, "config_snapshot.json"))


def _require(cfg, name, stage):
    path = os.path.join(cfg.out_dir, name)
    if not os.path.exists(path):
        raise StageError(f"stage '{stage}' checkpoint missing: run its stage "
                         f"first (expected {path})")
    network, bits, meta = load_checkpoint(path)
    if meta.get("stage") != stage:
        raise StageError(f"{path} holds stage {meta.get('stage')!r}, "
                         f"expected {stage!r}")
    return network, bits, meta


def train_dense(network: Network, dataset, epochs, lr, batch_size, seed,
                adversarial=False, epsilon_set=()):
    """Supervised training; optionally mixes clean and perturbed batches."""
    optimizer = Adam(network.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    for epoch in range(epochs):
        for x, y in dataset.batches(batch_size, rng):
            optimizer.zero_grad()
            if adversarial:
                x_adv = perturb_looping(network, x, y, epsilon_set, epoch)
                loss = (cross_entropy(network.forward(Tensor(x)), y) * 0.5
                        + cross_entropy(network.forward(Tensor(x_adv)), y) * 0.5)
            else:
                loss = cross_entropy(network.forward(Tensor(x)), y)
            loss.backward()
            optimizer.step()
    return network


def _basic_report(cfg, network, dataset, bits=None, sweep=False,
                  throughput=False, timings=None):
    spec = cfg.attack_spec()
    timings = dict(timings or {})
    t0 = time.perf_counter()
    eba = evaluate_eba(network, dataset)
    era = evaluate_era(network, dataset, spec)
    stats = boundary_distance_stats(network, dataset, spec)
    per_layer = []
    connectivity = None
    if bits is not None:
        per_layer = [list(r) for r in per_layer_sparsity(bits, network)]
        connectivity = connectivity_check(network, bits).to_dict()
    sweep_result = None
    if sweep:
        steps = cfg.evaluate.get("sweep_steps", (10, 50, 100))
        sweep_result = pgd_strength_sweep(network, dataset, spec.epsilon_max,
                                          steps=tuple(steps))
    if throughput:
        x, y = dataset.inputs, dataset.labels
        fgsm_spec = AttackSpec(family="fgsm", epsilon_max=spec.epsilon_max)
        loop_spec = AttackSpec(family="fgsm-looping", epsilon_max=spec.epsilon_max)
        timings["fgsm_s_per_1000"] = attack_throughput(network, x, y, fgsm_spec)
        timings["fgsm_looping_s_per_1000"] = attack_throughput(network, x, y, loop_spec)
        timings["pgd_s_per_1000"] = attack_throughput(network, x, y, spec)
    timings["eval_seconds"] = time.perf_counter() - t0
    return EvalReport(eba=eba, era=era, attack=spec.to_dict(), seed=cfg.seed,
                      per_layer=per_layer, distance_stats=stats,
                      connectivity=connectivity, sweep=sweep_result,
                      timings=timings)


def run_pretrain(cfg: ExperimentConfig) -> EvalReport:
    """Train the dense model (generic, or robust when pretrain.adversarial)."""
    _prepare_dir(cfg)
    block = cfg.pretrain
    train, test = load_experiment_data(cfg)
    network = build_network(cfg.architecture, cfg.seed)
    spec = cfg.attack_spec()
    eps_set = block.get("epsilon_set")
    if eps_set is None:
        eps_set = AttackSpec(family="fgsm-looping",
                             epsilon_max=float(block.get("epsilon_max",
                                                         spec.epsilon_max))
                             ).resolved_epsilon_set()
    t0 = time.perf_counter()
    train_dense(network, train,
                epochs=int(block.get("epochs", 10)),
                lr=float(block.get("lr", 1e-3)),
                batch_size=int(block.get("batch_size", 128)),
                seed=cfg.seed,
                adversarial=bool(block.get("adversarial", False)),
                epsilon_set=eps_set)
    train_seconds = time.perf_counter() - t0
    save_checkpoint(os.path.join(cfg.out_dir, PRETRAINED), network,
                    {"stage": "pretrained", "seed": cfg.seed,
                     "adversarial": bool(block.get("adversarial", False))})
    report = _basic_report(cfg, network, test,
                           timings={"train_seconds": train_seconds})
    report_dir = os.path.join(cfg.out_dir, "report-pretrain")
    save_report(report, report_dir)
    render_report_figures(report_dir, report)
    return report


def _binarize_excluding(model: MaskedModel, k_prime, dead):
    flat = np.abs(model.mask_vector())
    flat[dead] = -1.0
    order = np.argsort(-flat, kind="stable")
    bits = np.zeros(flat.size)
    bits[order[:k_prime]] = 1.0
    return BinaryMask.from_flat(bits, [m.shape for m in model.masks])


def prune_iterative(network: Network, dataset, prune_cfg, finetune_cfg,
                    teacher: Network):
    """Rounds of (prune a further slice, fine-tune) until the target holds."""
    step = prune_cfg.iterative_step
    targets = []
    t = step
    while t < prune_cfg.target_fraction - 1e-12:
        targets.append(round(t, 10))
        t += step
    targets.append(prune_cfg.target_fraction)
    current = network.copy()
    k = current.weight_count
    dead = np.zeros(k, dtype=bool)
    bits = None
    trace = None
    for round_target in targets:
        model = MaskedModel(current, trainable_biases=prune_cfg.trainable_biases)
        for m, d in zip(model.masks, BinaryMask.from_flat(dead.astype(float),
                                                          [m.shape for m in model.masks]).bits):
            m.data[d > 0] = 0.0
        round_cfg = dataclasses.replace(prune_cfg, target_fraction=round_target,
                                        mode="single-shot")
        _, trace = prune(model, dataset, round_cfg)
        k_prime = target_retained(k, round_target)
        bits = _binarize_excluding(model, k_prime, dead)
        current, _ = fine_tune(bits.apply_to(current), bits, teacher, dataset,
                               finetune_cfg)
        dead = bits.flat() == 0.0
    return bits, trace, current


def run_prune(cfg: ExperimentConfig, include_accuracy=True) -> EvalReport:
    """Sparsify the pretrained model and persist the binarized mask."""
    _prepare_dir(cfg)
    prune_cfg = cfg.prune_config()
    train, test = load_experiment_data(cfg)
    if cfg.prune.get("from_scratch"):
        network = build_network(cfg.architecture, cfg.seed + 1)
    else:
        network, _, _ = _require(cfg, PRETRAINED, "pretrained")
    t0 = time.perf_counter()
    if prune_cfg.mode == "iterative":
        bits, trace, _ = prune_iterative(network, train, prune_cfg,
                                         cfg.finetune_config(), network)
    else:
        model = MaskedModel(network, trainable_biases=prune_cfg.trainable_biases)
        if include_accuracy:
            bits, trace = prune(model, train, prune_cfg)
        else:
            bits, trace = ablate_no_accuracy(model, train, prune_cfg)
    prune_seconds = time.perf_counter() - t0
    trace.to_csv(os.path.join(cfg.out_dir, "prune_trace.csv"))
    save_checkpoint(os.path.join(cfg.out_dir, PRUNED), network,
                    {"stage": "pruned", "seed": cfg.seed,
                     "prune_target": prune_cfg.target_fraction}, bits=bits)
    pruned_net = bits.apply_to(network)
    report = _basic_report(cfg, pruned_net, test, bits=bits,
                           timings={"prune_seconds": prune_seconds})
    report_dir = os.path.join(cfg.out_dir, "report-prune")
    save_report(report, report_dir)
    render_report_figures(report_dir, report, prune_trace=trace)
    if trace.records:
        plot_prune_trace(trace, os.path.join(cfg.out_dir, "prune_trace.png"))
    return report


def run_finetune(cfg: ExperimentConfig) -> EvalReport:
    """Distill the pruned student against the pretrained teacher."""
    _prepare_dir(cfg)
    ft_cfg = cfg.finetune_config()
    train, test = load_experiment_data(cfg)
    network, bits, meta = _require(cfg, PRUNED, "pruned")
    if bits is None:
        raise StageError("pruned checkpoint lacks a binary mask")
    teacher, _, _ = _require(cfg, PRETRAINED, "pretrained")
    t0 = time.perf_counter()
    student, trace = fine_tune(bits.apply_to(network), bits, teacher, train,
                               ft_cfg)
    ft_seconds = time.perf_counter() - t0
    trace.to_csv(os.path.join(cfg.out_dir, "finetune_trace.csv"))
    save_checkpoint(os.path.join(cfg.out_dir, FINETUNED), student,
                    {"stage": "fine-tuned", "seed": cfg.seed,
                     "variant": ft_cfg.variant,
                     "prune_target": meta.get("prune_target")}, bits=bits)
    report = _basic_report(cfg, student, test, bits=bits,
                           timings={"finetune_seconds": ft_seconds})
    report_dir = os.path.join(cfg.out_dir, "report-finetune")
    save_report(report, report_dir)
    render_report_figures(report_dir, report, finetune_trace=trace)
    plot_finetune_trace(trace, os.path.join(cfg.out_dir, "finetune_trace.png"))
    return report


def latest_checkpoint(cfg: ExperimentConfig):
    for name, stage in ((FINETUNED, "fine-tuned"), (PRUNED, "pruned"),
                        (PRETRAINED, "pretrained")):
        path = os.path.join(cfg.out_dir, name)
        if os.path.exists(path):
            return _require(cfg, name, stage)
    raise StageError(f"no checkpoints found under {cfg.out_dir}")


def run_eval(cfg: ExperimentConfig) -> EvalReport:
    """Full measurement pass over the most advanced checkpoint present."""
    _prepare_dir(cfg)
    _, test = load_experiment_data(cfg)
    network, bits, meta = latest_checkpoint(cfg)
    target = None
    if bits is not None:
        target = bits.apply_to(network) if meta.get("stage") == "pruned" else network
    else:
        target = network
    report = _basic_report(cfg, target, test, bits=bits,
                           sweep=bool(cfg.evaluate.get("sweep", True)),
                           throughput=bool(cfg.evaluate.get("throughput", False)))
    report_dir = os.path.join(cfg.out_dir, "report-eval")
    save_report(report, report_dir)
    render_report_figures(report_dir, report)
    return report


ABLATION_VARIANTS = ("no-accuracy", "lwm", "scratch", "swap", "vanilla-kd",
                     "adversarial-kd", "fgsm-finetune", "pgd-finetune",
                     "iterative")


def run_ablate(cfg: ExperimentConfig, variant: str) -> EvalReport:
    """Run one ablation end to end inside out_dir/ablate-<variant>/."""
    if variant not in ABLATION_VARIANTS:
        raise StageError(f"unknown ablation {variant!r}; choose from "
                         f"{ABLATION_VARIANTS}")
    sub = dataclasses.replace(
        cfg, out_dir=os.path.join(cfg.out_dir, f"ablate-{variant}"))
    os.makedirs(sub.out_dir, exist_ok=True)

    if variant in ("vanilla-kd", "adversarial-kd", "fgsm-finetune",
                   "pgd-finetune"):
        _link_stage(cfg, sub, PRETRAINED, "pretrained")
        _link_stage(cfg, sub, PRUNED, "pruned")
        sub.finetune = dict(sub.finetune, variant=variant)
        run_finetune(sub)
        return run_eval(sub)
    if variant == "no-accuracy":
        _link_stage(cfg, sub, PRETRAINED, "pretrained")
        run_prune(sub, include_accuracy=False)
        run_finetune(sub)
        return run_eval(sub)
    if variant == "lwm":
        network, _, _ = _require(cfg, PRETRAINED, "pretrained")
        _prepare_dir(sub)
        prune_cfg = sub.prune_config()
        bits = prune_lwm_baseline(network, prune_cfg.target_fraction)
        save_checkpoint(os.path.join(sub.out_dir, PRETRAINED), network,
                        {"stage": "pretrained", "seed": sub.seed})
        save_checkpoint(os.path.join(sub.out_dir, PRUNED), network,
                        {"stage": "pruned", "seed": sub.seed,
                         "prune_target": prune_cfg.target_fraction}, bits=bits)
        PruneTrace().to_csv(os.path.join(sub.out_dir, "prune_trace.csv"))
        run_finetune(sub)
        return run_eval(sub)
    if variant == "scratch":
        sub.prune = dict(sub.prune, from_scratch=True)
        run_prune(sub)
        # the random base model doubles as its own distillation teacher
        network, _, _ = latest_checkpoint(
            dataclasses.replace(sub, out_dir=sub.out_dir))
        scratch_net = build_network(sub.architecture, sub.seed + 1)
        save_checkpoint(os.path.join(sub.out_dir, PRETRAINED), scratch_net,
                        {"stage": "pretrained", "seed": sub.seed,
                         "from_scratch": True})
        run_finetune(sub)
        return run_eval(sub)
    if variant == "swap":
        _link_stage(cfg, sub, PRETRAINED, "pretrained")
        sub.prune = dict(sub.prune, robust_term="attack")
        sub.finetune = dict(sub.finetune, variant="proxy-finetune")
        run_prune(sub)
        run_finetune(sub)
        return run_eval(sub)
    if variant == "iterative":
        _link_stage(cfg, sub, PRETRAINED, "pretrained")
        sub.prune = dict(sub.prune, mode="iterative")
        run_prune(sub)
        run_finetune(sub)
        return run_eval(sub)
    raise StageError(f"unhandled ablation {variant!r}")


def _link_stage(cfg, sub, name, stage):
    src = os.path.join(cfg.out_dir, name)
    if not os.path.exists(src):
        raise StageError(f"ablation needs the base '{stage}' checkpoint at {src}")
    dst = os.path.join(sub.out_dir, name)
    with open(src, "rb") as fin, open(dst, "wb") as fout:
        fout.write(fin.read())


def run_pipeline(cfg: ExperimentConfig) -> EvalReport:
    """pretrain -> prune -> finetune -> eval in one call."""
    run_pretrain(cfg)
    run_prune(cfg)
    run_finetune(cfg)
    return run_eval(cfg)
