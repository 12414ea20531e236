"""Retraining of retained weights after binarization.

The student is the pruned network (pruned positions pinned at exactly zero
for the whole run); the teacher is the original dense model. The loss mixes
a hard term, a temperature-softened distillation term, and a robustness term
whose flavor depends on the variant: epsilon-cycling FGSM (default), plain
FGSM, PGD, the boundary proxy, or nothing (vanilla distillation). Early
stopping tracks a held-out metric and returns the best checkpoint seen.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .attacks import AttackSpec, default_epsilon_set, fgsm, perturb_looping, pgd
from .data import split
from .errors import ContractError, MaskViolationError
from .evaluate import evaluate_eba, evaluate_era
from .losses import KDCoefficients, kd_terms
from .model import BinaryMask, Network
from .tensor import Adam

VARIANTS = ("modified-kd", "vanilla-kd", "adversarial-kd",
            "pgd-finetune", "fgsm-finetune", "proxy-finetune")


@dataclass(frozen=True)
class FineTuneConfig:
    coefficients: KDCoefficients = KDCoefficients()
    max_epochs: int = 100
    patience: int = 30
    lr: float = 5e-4
    epsilon_set: tuple = None  # defaults to the i/8 grid under epsilon_max
    variant: str = "modified-kd"
    batch_size: int = 128
    seed: int = 0
    val_fraction: float = 0.1
    val_subsample: int = 256
    val_attack: AttackSpec = None  # defaults to PGD at epsilon_max
    pgd_steps: int = 10

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown fine-tune variant {self.variant!r}")
        if self.patience > self.max_epochs:
            raise ContractError("patience must not exceed max_epochs")
        if not 0.0 < self.val_fraction < 1.0:
            raise ContractError("val_fraction must lie in (0, 1)")

    def resolved_coefficients(self) -> KDCoefficients:
        coef = self.coefficients
        if self.variant == "vanilla-kd":
            return dataclasses.replace(coef, gamma=0.0)
        if self.variant == "adversarial-kd":
            return dataclasses.replace(coef, alpha=0.0)
        return coef

    def resolved_epsilon_set(self):
        if self.epsilon_set is not None:
            return tuple(self.epsilon_set)
        return default_epsilon_set(self.coefficients.epsilon_max)

    def resolved_val_attack(self) -> AttackSpec:
        if self.val_attack is not None:
            return self.val_attack
        return AttackSpec(family="pgd", epsilon_max=self.coefficients.epsilon_max,
                          num_steps=self.pgd_steps)

    def uses_robust_metric(self) -> bool:
        return self.variant != "vanilla-kd"


@dataclass
class FineTuneEpochRecord:
    epoch: int
    hard: float
    soft: float
    atk: float
    total: float
    val_eba: float
    val_era: float


@dataclass
class FineTuneTrace:
    records: list = field(default_factory=list)

    FIELDS = ("epoch", "hard", "soft", "atk", "total", "val_eba", "val_era")

    def append(self, **kw):
        self.records.append(FineTuneEpochRecord(**kw))

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.FIELDS)
            for r in self.records:
                writer.writerow([getattr(r, f) for f in self.FIELDS])


def _attack_for(config: FineTuneConfig, epoch: int):
    eps = config.coefficients.epsilon_max
    if config.variant in ("modified-kd", "adversarial-kd"):
        eps_set = config.resolved_epsilon_set()
        return lambda model, x, y: perturb_looping(model, x, y, eps_set, epoch)
    if config.variant == "fgsm-finetune":
        return lambda model, x, y: fgsm(model, x, y, eps)
    if config.variant == "pgd-finetune":
        step = 2.5 * eps / config.pgd_steps
        return lambda model, x, y: pgd(model, x, y, eps, config.pgd_steps, step)
    return None  # vanilla-kd, proxy-finetune


def check_mask_conservation(network: Network, bits: BinaryMask):
    """Hard failure if any pruned position drifted off exact zero."""
    for i, (w, b) in enumerate(zip(network.weights, bits.bits)):
        pruned = w.data[b == 0]
        if pruned.size and np.any(pruned != 0.0):
            raise MaskViolationError(f"pruned weight became nonzero in layer {i}")


def fine_tune(pruned: Network, bits: BinaryMask, teacher: Network, dataset,
              config: FineTuneConfig):
    """Train retained weights; return (best network, trace).

    Gradients are masked so pruned weights never move; the pruned positions
    are re-pinned and audited every epoch. Early stopping watches held-out
    era (eba for the vanilla variant) and restores the best epoch's weights.
    """
    if teacher.class_count != pruned.class_count:
        raise ContractError("teacher and student class counts differ")
    student = bits.apply_to(pruned)
    frozen_teacher = teacher.copy()
    for p in frozen_teacher.parameters():
        p.requires_grad = False

    train, val, _ = split(dataset, (1.0 - config.val_fraction,
                                    config.val_fraction, 0.0), config.seed)
    if val is not None and config.val_subsample and val.n > config.val_subsample:
        idx = np.random.default_rng(config.seed).permutation(val.n)
        val = val.subset(np.sort(idx[:config.val_subsample]), "val")

    coef = config.resolved_coefficients()
    robust_proxy = config.variant == "proxy-finetune"
    keep = [b > 0 for b in bits.bits]
    optimizer = Adam(student.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    val_attack = config.resolved_val_attack()

    trace = FineTuneTrace()
    best_metric = -math.inf
    best_epoch = -1
    best_state = None

    for epoch in range(config.max_epochs):
        attack = _attack_for(config, epoch)
        sums = np.zeros(4)
        batches = 0
        for x, y in train.batches(config.batch_size, rng):
            total, hard, soft, atk = kd_terms(student, frozen_teacher, x, y,
                                              coef, attack, robust_proxy)
            optimizer.zero_grad()
            total.backward()
            for w, mask in zip(student.weights, keep):
                w.grad *= mask
            optimizer.step()
            for w, mask in zip(student.weights, keep):
                w.data[~mask] = 0.0
            sums += (hard.item(), soft.item(), atk.item(), total.item())
            batches += 1
        check_mask_conservation(student, bits)

        val_eba = evaluate_eba(student, val)
        if config.uses_robust_metric():
            val_era = evaluate_era(student, val, val_attack)
            metric = val_era
        else:
            val_era = float("nan")
            metric = val_eba
        hard_m, soft_m, atk_m, total_m = sums / max(batches, 1)
        trace.append(epoch=epoch, hard=hard_m, soft=soft_m, atk=atk_m,
                     total=total_m, val_eba=val_eba, val_era=val_era)

        if metric > best_metric:
            best_metric = metric
            best_epoch = epoch
            best_state = ([w.data.copy() for w in student.weights],
                          [b.data.copy() for b in student.biases])
        if epoch - best_epoch >= config.patience:
            break

    if best_state is not None:
        for w, data in zip(student.weights, best_state[0]):
            w.data = data
        for b, data in zip(student.biases, best_state[1]):
            b.data = data
    check_mask_conservation(student, bits)
    return student, trace


def coefficient_grid(step: float = 0.125):
    """Simplex grid of (alpha, beta, gamma) triples used by the search driver."""
    n = int(round(1.0 / step))
    triples = []
    for i in range(n + 1):
        for j in range(n + 1 - i):
            triples.append((i * step, j * step, (n - i - j) * step))
    return [t for t in triples if sum(t) > 0]


def coefficient_search(pruned: Network, bits: BinaryMask, teacher: Network,
                       dataset, config: FineTuneConfig, test_set,
                       step: float = 0.25):
    """Grid-search loss weights on the simplex; returns (best coef, results).

    Each candidate reuses the given config but swaps coefficients; candidates
    are ranked by robust accuracy on the provided held-out set.
    """
    results = []
    best = None
    for alpha, beta, gamma in coefficient_grid(step):
        coef = dataclasses.replace(config.coefficients, alpha=alpha,
                                   beta=beta, gamma=gamma)
        trial = dataclasses.replace(config, coefficients=coef)
        network, _ = fine_tune(pruned, bits, teacher, dataset, trial)
        era = evaluate_era(network, test_set, trial.resolved_val_attack())
        results.append({"alpha": alpha, "beta": beta, "gamma": gamma, "era": era})
        if best is None or era > best[1]:
            best = (coef, era)
    return best[0], results
