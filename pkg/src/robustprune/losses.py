"""Scalar training objectives.

Covers the empirical risk (cross-entropy), the decision-boundary proximity
proxy used as a robustness penalty, the retained-capacity (ridge) penalty,
their multiplier-weighted composite with dual-ascent updates, and the
three-term distillation loss used for fine-tuning.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError
from .tensor import Tensor


@dataclass(frozen=True)
class LagrangianState:
    """Dual multipliers, their step schedule, and the retained-count target.

    Multipliers start at zero and only ever grow: each dual-ascent update
    adds rho_k times the absolute constraint violation.
    """

    lambda_a: float = 0.0
    lambda_p: float = 0.0
    rho_schedule: tuple = (1e-3,)
    k_prime: int = 0

    def rho(self, epoch: int) -> float:
        sched = self.rho_schedule
        rho = sched[min(epoch, len(sched) - 1)]
        if rho < 0:
            raise ContractError("rho step size must be non-negative")
        return float(rho)


@dataclass(frozen=True)
class KDCoefficients:
    """Fine-tuning loss weights. Defaults are the published 99%-pruning recipe."""

    alpha: float = 0.351
    beta: float = 0.526
    gamma: float = 0.240
    temperature: float = 4.0
    epsilon_max: float = 0.1

    def __post_init__(self):
        if self.alpha + self.beta + self.gamma <= 0:
            raise ContractError("at least one loss coefficient must be positive")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ContractError("loss coefficients must be non-negative")
        if self.temperature <= 0:
            raise ContractError("temperature must be positive")


def _label_array(labels, class_count):
    y = np.asarray(labels)
    if y.ndim != 1:
        raise ContractError("labels must be a 1-D index array")
    if y.size and (y.min() < 0 or y.max() >= class_count):
        raise ContractError(f"labels must lie in [0, {class_count})")
    return y.astype(np.int64)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the true class under softmax(logits)."""
    if logits.data.ndim != 2:
        raise ContractError("cross_entropy expects batch x classes logits")
    n, k = logits.shape
    y = _label_array(labels, k)
    if y.size != n:
        raise ContractError("labels and logits batch sizes differ")
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y] = 1.0
    picked = T.tensor_sum(T.mul(T.log_softmax(logits), Tensor(onehot)))
    return T.mul(picked, Tensor(-1.0 / n))


def adversarial_proxy(probabilities: Tensor) -> Tensor:
    """Mean of 1 - sum(p^2): high near the decision boundary, 0 when one-hot."""
    p = probabilities.data
    rows = p[None, :] if p.ndim == 1 else p
    if rows.ndim != 2:
        raise ContractError("probabilities must be 1-D or 2-D")
    if rows.min() < -1e-9:
        raise ContractError("probabilities must be non-negative")
    if np.max(np.abs(rows.sum(axis=1) - 1.0)) > 1e-6:
        raise ContractError("probability rows must sum to 1 within 1e-6")
    n = rows.shape[0]
    total_sq = T.tensor_sum(T.square(probabilities))
    return T.sub(Tensor(1.0), T.mul(total_sq, Tensor(1.0 / n)))


def pruning_proxy(mask_b, k_prime: int) -> Tensor:
    """|sum(b^2) - k'|: the ridge-style retained-capacity violation."""
    masks = [mask_b] if isinstance(mask_b, Tensor) else list(mask_b)
    for m in masks:
        if m.data.size and (m.data.min() < -1e-12 or m.data.max() > 1.0 + 1e-12):
            raise ContractError("mask values must lie in [0, 1]")
    total = T.tensor_sum(T.square(masks[0]))
    for m in masks[1:]:
        total = T.add(total, T.tensor_sum(T.square(m)))
    return T.absolute(T.sub(total, Tensor(float(k_prime))))


def lagrangian_terms(model, x, y, state: LagrangianState,
                     include_accuracy=True, adv_term: Tensor = None):
    """One forward pass feeding all three loss terms.

    Returns (total, ce, adv, prune) as graph tensors. `adv_term` substitutes
    an attack-based robustness loss for the boundary proxy (used by the
    stage-swap ablation); ce is still reported when excluded from the total.
    """
    if state.lambda_a < 0 or state.lambda_p < 0:
        raise ContractError("multipliers must be non-negative")
    logits = model.forward(x)
    ce = cross_entropy(logits, y)
    if adv_term is None:
        adv = adversarial_proxy(T.softmax(logits))
    else:
        adv = adv_term
    prune = pruning_proxy(model.masks, state.k_prime)
    total = T.add(T.mul(T.absolute(adv), Tensor(state.lambda_a)),
                  T.mul(prune, Tensor(state.lambda_p)))
    if include_accuracy:
        total = T.add(ce, total)
    return total, ce, adv, prune


def lagrangian_loss(model, x, y, state: LagrangianState) -> Tensor:
    """Cross-entropy plus multiplier-weighted boundary and capacity penalties."""
    total, _, _, _ = lagrangian_terms(model, x, y, state)
    return total


def dual_ascent_update(state: LagrangianState, epoch: int,
                       adv_value: float, prune_value: float) -> LagrangianState:
    """Grow each multiplier by rho_k times its absolute epoch-end violation."""
    rho = state.rho(epoch)
    return dataclasses.replace(
        state,
        lambda_a=state.lambda_a + rho * abs(float(adv_value)),
        lambda_p=state.lambda_p + rho * abs(float(prune_value)),
    )


def soft_distillation_loss(teacher_logits, student_logits: Tensor,
                           temperature: float) -> Tensor:
    """KL(teacher_T || student_T), batch mean, scaled by T^2.

    Teacher logits are treated as constants; gradients reach the student only.
    """
    if temperature <= 0:
        raise ContractError("temperature must be positive")
    t = np.asarray(teacher_logits.data if isinstance(teacher_logits, Tensor)
                   else teacher_logits, dtype=np.float64)
    if t.shape != student_logits.shape:
        raise ContractError("teacher and student logits must share a shape")
    n = t.shape[0]
    shifted = t / temperature
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    log_pt = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    pt = np.exp(log_pt)
    entropy = float(np.sum(pt * log_pt))
    log_ps = T.log_softmax(T.mul(student_logits, Tensor(1.0 / temperature)))
    cross = T.tensor_sum(T.mul(Tensor(pt), log_ps))
    scale = temperature * temperature / n
    return T.mul(T.sub(Tensor(entropy), cross), Tensor(scale))


def kd_terms(student, teacher, x, y, coef: KDCoefficients, attack=None,
             robust_proxy=False):
    """Three-term fine-tuning loss: alpha*hard + beta*soft + gamma*robust.

    The robust term is cross-entropy on attacked inputs (attack is a callable
    (model, x, y) -> perturbed x), or the boundary proxy on clean inputs when
    robust_proxy is True. Zero-coefficient terms are skipped and reported as 0.
    Returns (total, hard, soft, atk) as floats-bearing graph tensors.
    """
    xt = x if isinstance(x, Tensor) else Tensor(x)
    s_logits = student.forward(xt)
    zero = Tensor(0.0)
    hard = cross_entropy(s_logits, y) if coef.alpha > 0 else zero
    if coef.beta > 0:
        t_logits = teacher.forward(xt.data)
        soft = soft_distillation_loss(t_logits.data, s_logits, coef.temperature)
    else:
        soft = zero
    if coef.gamma > 0:
        if robust_proxy:
            atk = adversarial_proxy(T.softmax(s_logits))
        else:
            if attack is None:
                raise ContractError("gamma > 0 requires an attack operator")
            x_adv = attack(student, xt.data, y)
            atk = cross_entropy(student.forward(Tensor(x_adv)), y)
    else:
        atk = zero
    total = T.add(T.add(T.mul(hard, Tensor(coef.alpha)),
                        T.mul(soft, Tensor(coef.beta))),
                  T.mul(atk, Tensor(coef.gamma)))
    return total, hard, soft, atk


def kd_finetune_loss(student, teacher, x, y, coef: KDCoefficients,
                     attack=None) -> Tensor:
    """Scalar modified-distillation objective (see kd_terms)."""
    total, _, _, _ = kd_terms(student, teacher, x, y, coef, attack)
    return total
