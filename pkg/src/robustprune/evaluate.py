"""Measurement: benign and robust accuracy, attack-strength sweeps,
decision-boundary distance statistics, seed-variance summaries, and the
serializable evaluation report.

Evaluation is read-only on the model: attacks run against a frozen copy so
batches can fan out over threads (capped by the DWD_THREADS environment
variable) without touching shared gradient state.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .attacks import AttackSpec, run_attack
from .errors import ContractError
from .model import MaskedModel, Network
from .tensor import Tensor

REPORT_SCHEMA = "dwd-report/1"


def eval_threads() -> int:
    try:
        n = int(os.environ.get("DWD_THREADS", "1"))
    except ValueError:
        n = 1
    return max(1, n)


def inference_copy(model) -> Network:
    """Frozen stand-alone copy; for masked models the mask is folded in."""
    if isinstance(model, MaskedModel):
        net = model.network.copy()
        for w, m in zip(net.weights, model.masks):
            w.data = w.data * m.data
    else:
        net = model.copy()
    for p in net.parameters():
        p.requires_grad = False
    return net


def _spans(n, batch_size):
    return [(lo, min(lo + batch_size, n)) for lo in range(0, n, batch_size)]


def _map_batches(fn, n, batch_size):
    spans = _spans(n, batch_size)
    workers = min(eval_threads(), len(spans))
    if workers <= 1:
        parts = [fn(lo, hi) for lo, hi in spans]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda s: fn(*s), spans))
    return np.concatenate(parts)


def predict_labels(model, inputs, batch_size=256) -> np.ndarray:
    net = inference_copy(model)

    def run(lo, hi):
        return net.forward(inputs[lo:hi]).data.argmax(axis=1)

    return _map_batches(run, inputs.shape[0], batch_size)


def evaluate_eba(model, dataset, batch_size=256) -> float:
    """Percentage of argmax-correct predictions on unperturbed samples."""
    if dataset is None or getattr(dataset, "n", 0) == 0:
        raise ContractError("evaluation needs a nonempty test set")
    pred = predict_labels(model, dataset.inputs, batch_size)
    return float(100.0 * (pred == dataset.labels).mean())


def attack_dataset(model, dataset, spec: AttackSpec, batch_size=256,
                   epoch=0) -> np.ndarray:
    """Perturb every sample per the attack spec, against a frozen model copy."""
    net = inference_copy(model)
    inputs, labels = dataset.inputs, dataset.labels

    def run(lo, hi):
        return run_attack(spec, net, inputs[lo:hi], labels[lo:hi], epoch)

    return _map_batches(run, dataset.n, batch_size)


def evaluate_era(model, dataset, spec: AttackSpec, batch_size=256) -> float:
    """Percentage of argmax-correct predictions on attacked samples."""
    if dataset is None or getattr(dataset, "n", 0) == 0:
        raise ContractError("evaluation needs a nonempty test set")
    adv = attack_dataset(model, dataset, spec, batch_size)
    pred = predict_labels(model, adv, batch_size)
    return float(100.0 * (pred == dataset.labels).mean())


def pgd_strength_sweep(model, dataset, epsilon_max, steps=(10, 50, 100),
                       batch_size=256) -> dict:
    """era at fixed budget across step counts, step size 2.5*eps/steps each."""
    eras = []
    for num_steps in steps:
        spec = AttackSpec(family="pgd", epsilon_max=epsilon_max,
                          num_steps=int(num_steps))
        eras.append(evaluate_era(model, dataset, spec, batch_size))
    std = float(np.std(eras, ddof=1)) if len(eras) > 1 else 0.0
    return {"epsilon_max": float(epsilon_max), "steps": [int(s) for s in steps],
            "era": eras, "std": std}


def _distance_scores(probs, class_count):
    raw = 1.0 - np.sum(probs * probs, axis=1)
    score = (np.sum(probs * probs, axis=1) - 1.0 / class_count) / (1.0 - 1.0 / class_count)
    return raw, score


def boundary_distance_stats(model, dataset, spec: AttackSpec,
                            batch_size=256) -> dict:
    """Mean boundary-distance score per correctness group.

    The raw proxy 1 - sum(p^2) grows toward the boundary; the reported
    distance score (sum(p^2) - 1/K) / (1 - 1/K) grows away from it. Both are
    published to keep the orientation unambiguous.
    """
    net = inference_copy(model)
    k = net.class_count

    def probs_for(inputs):
        def run(lo, hi):
            return T.softmax(net.forward(inputs[lo:hi])).data

        return _map_batches(run, inputs.shape[0], batch_size)

    groups = {}
    benign_p = probs_for(dataset.inputs)
    adv = attack_dataset(net, dataset, spec, batch_size)
    adv_p = probs_for(adv)
    for tag, probs in (("benign", benign_p), ("adv", adv_p)):
        correct = probs.argmax(axis=1) == dataset.labels
        raw, score = _distance_scores(probs, k)
        for sub, sel in ((f"{tag}-correct", correct), (f"{tag}-wrong", ~correct)):
            if sel.any():
                groups[sub] = {"count": int(sel.sum()),
                               "distance_score": float(score[sel].mean()),
                               "raw_proxy": float(raw[sel].mean())}
            else:
                groups[sub] = {"count": 0, "omitted": True}
    return groups


def multi_seed_run(experiment, seeds) -> dict:
    """Run a (seed) -> (eba, era) experiment across seeds; mean and sample std."""
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ContractError("need at least 2 seeds")
    ebas, eras = [], []
    for seed in seeds:
        eba, era = experiment(seed)
        ebas.append(float(eba))
        eras.append(float(era))
    return {
        "seeds": seeds,
        "eba": {"values": ebas, "mean": float(np.mean(ebas)),
                "std": float(np.std(ebas, ddof=1))},
        "era": {"values": eras, "mean": float(np.mean(eras)),
                "std": float(np.std(eras, ddof=1))},
    }


@dataclass
class EvalReport:
    eba: float
    era: float
    attack: dict
    seed: int
    per_layer: list = field(default_factory=list)
    distance_stats: dict = field(default_factory=dict)
    connectivity: dict = None
    sweep: dict = None
    timings: dict = field(default_factory=dict)
    schema: str = REPORT_SCHEMA

    def __post_init__(self):
        for name, value in (("eba", self.eba), ("era", self.era)):
            if value is not None and not 0.0 <= value <= 100.0:
                raise ContractError(f"{name} must lie in [0, 100]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @staticmethod
    def from_json(text) -> "EvalReport":
        d = json.loads(text)
        if d.get("schema") != REPORT_SCHEMA:
            raise ContractError(f"unknown report schema {d.get('schema')!r}")
        return EvalReport(**d)


def save_report(report: EvalReport, out_dir):
    """Write report.json plus companion CSVs for external plotting."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        fh.write(report.to_json())
    if report.per_layer:
        with open(os.path.join(out_dir, "per_layer.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["layer", "pruned_pct"])
            writer.writerows(report.per_layer)
    if report.distance_stats:
        with open(os.path.join(out_dir, "distance.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["group", "count", "distance_score", "raw_proxy"])
            for group, stats in report.distance_stats.items():
                writer.writerow([group, stats.get("count", 0),
                                 stats.get("distance_score", ""),
                                 stats.get("raw_proxy", "")])
    if report.sweep:
        with open(os.path.join(out_dir, "sweep.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["steps", "era"])
            writer.writerows(zip(report.sweep["steps"], report.sweep["era"]))


def load_report(out_dir) -> EvalReport:
    with open(os.path.join(out_dir, "report.json")) as fh:
        return EvalReport.from_json(fh.read())
