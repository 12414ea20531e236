"""Input-space adversarial example generation.

Three families: single-step FGSM, the epsilon-cycling FGSM variant used
during fine-tuning (one FGSM step whose budget rotates through a schedule
across epochs, sampling the interior of the L-inf ball), and multi-step PGD
with projection used for evaluation. All attacks are pure functions of
(model, batch) and clip into the valid input range.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .losses import cross_entropy
from .tensor import Tensor

FAMILIES = ("fgsm", "fgsm-looping", "pgd")


def default_epsilon_set(epsilon_max: float, count: int = 8):
    """Ascending budgets eps_max * i/count, spanning the ball interior."""
    return tuple(epsilon_max * i / count for i in range(1, count + 1))


@dataclass(frozen=True)
class AttackSpec:
    family: str = "pgd"
    epsilon_max: float = 8.0 / 255.0
    epsilon_set: tuple = None  # fgsm-looping only; defaults to i/8 grid
    num_steps: int = 10
    step_size: float = None  # pgd; defaults to 2.5 * eps_max / num_steps
    clip_range: tuple = (0.0, 1.0)
    random_start: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ContractError(f"unknown attack family {self.family!r}")
        if self.epsilon_max < 0:
            raise ContractError("epsilon_max must be non-negative")
        if self.epsilon_set is not None:
            eps = tuple(float(e) for e in self.epsilon_set)
            if any(e < 0 or e > self.epsilon_max + 1e-12 for e in eps):
                raise ContractError("every epsilon must lie in [0, epsilon_max]")
            object.__setattr__(self, "epsilon_set", eps)
        if self.num_steps < 1:
            raise ContractError("num_steps must be >= 1")
        if self.step_size is not None and self.step_size <= 0:
            raise ContractError("step_size must be positive")
        object.__setattr__(self, "clip_range",
                           (float(self.clip_range[0]), float(self.clip_range[1])))

    def resolved_epsilon_set(self):
        if self.epsilon_set is not None:
            return self.epsilon_set
        return default_epsilon_set(self.epsilon_max)

    def resolved_step_size(self):
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.epsilon_max / self.num_steps

    def to_dict(self):
        return {
            "family": self.family,
            "epsilon_max": self.epsilon_max,
            "epsilon_set": list(self.epsilon_set) if self.epsilon_set else None,
            "num_steps": self.num_steps,
            "step_size": self.step_size,
            "clip_range": list(self.clip_range),
            "random_start": self.random_start,
        }

    @staticmethod
    def from_dict(d):
        d = dict(d)
        if d.get("epsilon_set") is not None:
            d["epsilon_set"] = tuple(d["epsilon_set"])
        if d.get("clip_range") is not None:
            d["clip_range"] = tuple(d["clip_range"])
        return AttackSpec(**d)


def input_gradient(model, x: np.ndarray, y) -> np.ndarray:
    """Gradient of the cross-entropy loss w.r.t. the input batch."""
    xt = Tensor(x, requires_grad=True)
    loss = cross_entropy(model.forward(xt), y)
    loss.backward()
    return xt.grad


def fgsm(model, x, y, epsilon: float, clip_range=(0.0, 1.0)) -> np.ndarray:
    """One signed-gradient step of size epsilon, clipped to the input range."""
    if epsilon < 0:
        raise ContractError("epsilon must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    g = input_gradient(model, x, y)
    return np.clip(x + epsilon * np.sign(g), clip_range[0], clip_range[1])


def perturb_looping(model, x, y, epsilon_set, epoch: int,
                    clip_range=(0.0, 1.0)) -> np.ndarray:
    """FGSM with the budget cycled across epochs: eps = E[epoch mod |E|]."""
    eps_set = tuple(epsilon_set)
    if not eps_set:
        raise ContractError("epsilon set must be nonempty")
    epsilon = eps_set[epoch % len(eps_set)]
    return fgsm(model, x, y, epsilon, clip_range)


def pgd(model, x, y, epsilon_max: float, num_steps: int, step_size: float,
        clip_range=(0.0, 1.0), random_start=False, rng=None) -> np.ndarray:
    """Iterated signed-gradient ascent projected onto the L-inf ball."""
    if epsilon_max < 0:
        raise ContractError("epsilon_max must be non-negative")
    if num_steps < 1:
        raise ContractError("num_steps must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    lo, hi = clip_range
    if epsilon_max == 0:
        return np.clip(x, lo, hi)
    if step_size <= 0:
        raise ContractError("step_size must be positive")
    cur = x
    if random_start:
        rng = rng or np.random.default_rng(0)
        cur = np.clip(x + rng.uniform(-epsilon_max, epsilon_max, size=x.shape),
                      lo, hi)
    for _ in range(num_steps):
        g = input_gradient(model, cur, y)
        cur = cur + step_size * np.sign(g)
        cur = np.clip(cur, x - epsilon_max, x + epsilon_max)
        cur = np.clip(cur, lo, hi)
    return cur


def run_attack(spec: AttackSpec, model, x, y, epoch: int = 0,
               rng=None) -> np.ndarray:
    """Dispatch an AttackSpec; `epoch` only matters for the looping family."""
    if spec.family == "fgsm":
        return fgsm(model, x, y, spec.epsilon_max, spec.clip_range)
    if spec.family == "fgsm-looping":
        return perturb_looping(model, x, y, spec.resolved_epsilon_set(),
                               epoch, spec.clip_range)
    return pgd(model, x, y, spec.epsilon_max, spec.num_steps,
               spec.resolved_step_size(), spec.clip_range,
               spec.random_start, rng)


def attack_throughput(model, inputs, labels, spec: AttackSpec,
                      batch_size: int = 128, epoch: int = 0) -> float:
    """Wall-clock seconds per 1000 attacked samples (after one warmup batch)."""
    x = np.asarray(inputs, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise ContractError("throughput needs a nonempty batch")
    run_attack(spec, model, x[:batch_size], labels[:batch_size], epoch)
    start = time.perf_counter()
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        run_attack(spec, model, x[lo:hi], labels[lo:hi], epoch)
    elapsed = time.perf_counter() - start
    return elapsed / n * 1000.0
