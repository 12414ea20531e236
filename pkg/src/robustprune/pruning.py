"""Mask sparsification driven by dual ascent, plus post-prune analysis.

The main loop alternates per-batch Adam steps on the relaxed mask (under the
composite loss) with per-epoch multiplier growth proportional to the epoch's
full-dataset constraint violations. Training stops once the soft sparsity
(fraction of mask entries below a small threshold) reaches the target, then
the mask is binarized to exactly k' retained weights.

Also here: structural checks on the binarized result (layer connectivity via
reachability over the retained-weight graph, per-layer sparsity, retained vs
removed magnitude separation) and the global least-weight-magnitude baseline.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .attacks import default_epsilon_set, perturb_looping
from .errors import ContractError, DivergenceError, NumericError
from .losses import (LagrangianState, adversarial_proxy, cross_entropy,
                     dual_ascent_update, lagrangian_terms, pruning_proxy)
from .model import (BinaryMask, MaskedModel, Network, binarize_mask,
                    shape_trace)
from .tensor import Adam, Tensor
from . import tensor as T

PRUNE_MODES = ("single-shot", "iterative")
ROBUST_TERMS = ("proxy", "attack")


@dataclass(frozen=True)
class PruneRunConfig:
    target_fraction: float
    max_epochs: int = 60
    lr: float = 0.01
    rho_schedule: tuple = (1e-3,)
    seed: int = 0
    mode: str = "single-shot"
    iterative_step: float = 0.20
    batch_size: int = 128
    soft_threshold: float = 0.01
    eval_subsample: int = None  # epoch-end dual-update sample; None = full set
    robust_term: str = "proxy"
    attack_epsilon_max: float = 0.1
    attack_epsilon_set: tuple = None
    trainable_biases: bool = True

    def __post_init__(self):
        if not 0.0 <= self.target_fraction < 1.0:
            raise ContractError("target_fraction must lie in [0, 1)")
        if not 0.0 < self.iterative_step <= 1.0:
            raise ContractError("iterative_step must lie in (0, 1]")
        if self.mode not in PRUNE_MODES:
            raise ContractError(f"unknown prune mode {self.mode!r}")
        if self.robust_term not in ROBUST_TERMS:
            raise ContractError(f"unknown robust term {self.robust_term!r}")
        if any(r < 0 for r in self.rho_schedule):
            raise ContractError("rho schedule must be non-negative")

    def epsilon_set(self):
        if self.attack_epsilon_set is not None:
            return tuple(self.attack_epsilon_set)
        return default_epsilon_set(self.attack_epsilon_max)


@dataclass
class PruneEpochRecord:
    epoch: int
    loss: float
    adv_proxy: float
    prune_proxy: float
    lambda_a: float
    lambda_p: float
    sparsity: float


@dataclass
class PruneTrace:
    records: list = field(default_factory=list)

    FIELDS = ("epoch", "loss", "adv_proxy", "prune_proxy",
              "lambda_a", "lambda_p", "sparsity")

    def append(self, **kw):
        self.records.append(PruneEpochRecord(**kw))

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.FIELDS)
            for r in self.records:
                writer.writerow([getattr(r, f) for f in self.FIELDS])

    @staticmethod
    def from_csv(path):
        trace = PruneTrace()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                trace.append(epoch=int(row["epoch"]),
                             **{f: float(row[f]) for f in PruneTrace.FIELDS[1:]})
        return trace


def soft_sparsity(model: MaskedModel, threshold: float) -> float:
    flat = model.mask_vector()
    return float((np.abs(flat) < threshold).mean())


def target_retained(k: int, target_fraction: float) -> int:
    return max(1, int(round(k * (1.0 - target_fraction))))


def _dataset_values(model, dataset, config, state, epoch, rng):
    """Epoch-end full-dataset (or subsampled) loss, robustness, and capacity values."""
    inputs, labels = dataset.inputs, dataset.labels
    if config.eval_subsample and config.eval_subsample < dataset.n:
        idx = rng.choice(dataset.n, size=config.eval_subsample, replace=False)
        inputs, labels = inputs[idx], labels[idx]
    ce_total = 0.0
    adv_total = 0.0
    n = inputs.shape[0]
    for lo in range(0, n, config.batch_size):
        x = inputs[lo:lo + config.batch_size]
        y = labels[lo:lo + config.batch_size]
        if config.robust_term == "attack":
            x_adv = perturb_looping(model, x, y, config.epsilon_set(), epoch)
            adv_total += cross_entropy(model.forward(x_adv), y).item() * len(y)
        logits = model.forward(x)
        ce_total += cross_entropy(logits, y).item() * len(y)
        if config.robust_term == "proxy":
            adv_total += adversarial_proxy(T.softmax(logits)).item() * len(y)
    prune_value = pruning_proxy(model.masks, state.k_prime).item()
    return ce_total / n, adv_total / n, prune_value


def prune(model: MaskedModel, dataset, config: PruneRunConfig,
          include_accuracy: bool = True):
    """Learn a relaxed mask by dual ascent and binarize it to k' weights.

    Returns (BinaryMask, PruneTrace). Raises DivergenceError (trace attached)
    if the loss goes non-finite.
    """
    k = model.k
    k_prime = target_retained(k, config.target_fraction)
    trace = PruneTrace()
    if config.target_fraction == 0.0:
        return BinaryMask([np.ones(m.shape) for m in model.masks]), trace

    state = LagrangianState(rho_schedule=tuple(config.rho_schedule),
                            k_prime=k_prime)
    optimizer = Adam(model.trainable_params(), lr=config.lr)
    rng = np.random.default_rng(config.seed)

    try:
        for epoch in range(config.max_epochs):
            for x, y in dataset.batches(config.batch_size, rng):
                adv_term = None
                if config.robust_term == "attack":
                    x_adv = perturb_looping(model, x, y, config.epsilon_set(), epoch)
                    adv_term = cross_entropy(model.forward(Tensor(x_adv)), y)
                total, _, _, _ = lagrangian_terms(model, x, y, state,
                                                  include_accuracy=include_accuracy,
                                                  adv_term=adv_term)
                optimizer.zero_grad()
                total.backward()
                optimizer.step()
                model.clamp_masks()

            ce_val, adv_val, prune_val = _dataset_values(
                model, dataset, config, state, epoch, rng)
            state = dual_ascent_update(state, epoch, adv_val, prune_val)
            sparsity = soft_sparsity(model, config.soft_threshold)
            trace.append(epoch=epoch, loss=ce_val, adv_proxy=adv_val,
                         prune_proxy=prune_val, lambda_a=state.lambda_a,
                         lambda_p=state.lambda_p, sparsity=sparsity)
            if sparsity >= config.target_fraction:
                break
    except NumericError as exc:
        raise DivergenceError(f"pruning diverged: {exc}", trace=trace) from exc

    return binarize_mask(model, k_prime), trace


def ablate_no_accuracy(model: MaskedModel, dataset, config: PruneRunConfig):
    """Prune with the accuracy term removed from the composite loss."""
    return prune(model, dataset, config, include_accuracy=False)


def magnitude_separation(model: MaskedModel, mask: BinaryMask) -> float:
    """Mean |b| over retained entries divided by mean |b| over removed ones."""
    values = np.abs(model.mask_vector())
    bits = mask.flat().astype(bool)
    if bits.all():
        return float("inf")
    retained = values[bits].mean() if bits.any() else 0.0
    removed = values[~bits].mean()
    if removed == 0.0:
        return float("inf")
    return float(retained / removed)


@dataclass
class ConnectivityReport:
    connected: bool
    disconnected_layers: list = field(default_factory=list)

    def to_dict(self):
        return {"connected": self.connected,
                "disconnected_layers": list(self.disconnected_layers)}


def _interface_graph(network: Network, bits_list):
    """Linearize the retained-weight graph: one link per weighted layer plus
    pass-through expansions at flatten boundaries."""
    if network.input_shape is None:
        raise ContractError("network input shape required for connectivity")
    shapes = shape_trace(network.specs, network.input_shape)
    links = []  # (weighted_index or None, src array, dst array, n_src, n_dst)
    wi = 0
    # node granularity: channels while spatial, units after flatten
    n_nodes = network.input_shape[0] if len(network.input_shape) == 3 \
        else network.input_shape[0]
    for pos, spec in enumerate(network.specs):
        if spec.kind == "conv2d":
            mat = bits_list[wi].reshape(bits_list[wi].shape[0],
                                        bits_list[wi].shape[1], -1).any(axis=2)
            dst, src = np.nonzero(mat)  # mat[f, c]
            links.append((wi, src, dst, spec.in_channels, spec.out_channels))
            n_nodes = spec.out_channels
            wi += 1
        elif spec.kind == "dense":
            src, dst = np.nonzero(bits_list[wi])
            links.append((wi, src, dst, spec.in_size, spec.out_size))
            n_nodes = spec.out_size
            wi += 1
        elif spec.kind == "flatten":
            before = shapes[pos]
            if len(before) == 3:
                c, h, w = before
                units = c * h * w
                src = np.repeat(np.arange(c), h * w)
                dst = np.arange(units)
                links.append((None, src, dst, c, units))
                n_nodes = units
        # relu / maxpool / softmax-output keep the node space
    return links


def connectivity_check(network: Network, mask: BinaryMask) -> ConnectivityReport:
    """Check that every layer has a retained weight on an input-output path.

    A weighted layer passes when at least one of its retained edges has a
    forward-reachable source and a backward-reachable destination.
    """
    links = _interface_graph(network, mask.bits)
    forward = [None] * (len(links) + 1)
    forward[0] = np.ones(links[0][3], dtype=bool)
    for i, (_, src, dst, n_src, n_dst) in enumerate(links):
        reach = np.zeros(n_dst, dtype=bool)
        if len(src):
            live = forward[i][src]
            reach[dst[live]] = True
        forward[i + 1] = reach
    backward = [None] * (len(links) + 1)
    backward[-1] = np.ones(links[-1][4], dtype=bool)
    for i in range(len(links) - 1, -1, -1):
        _, src, dst, n_src, n_dst = links[i]
        reach = np.zeros(n_src, dtype=bool)
        if len(src):
            live = backward[i + 1][dst]
            reach[src[live]] = True
        backward[i] = reach
    disconnected = []
    for i, (wi, src, dst, _, _) in enumerate(links):
        if wi is None:
            continue
        on_path = len(src) > 0 and bool(
            (forward[i][src] & backward[i + 1][dst]).any())
        if not on_path:
            disconnected.append(wi)
    return ConnectivityReport(connected=not disconnected,
                              disconnected_layers=disconnected)


def per_layer_sparsity(mask: BinaryMask, network: Network):
    """Exact pruned percentage per weighted layer, input to output order."""
    rows = []
    counters = {}
    for spec, bits in zip(network.weighted, mask.bits):
        idx = counters.get(spec.kind, 0)
        counters[spec.kind] = idx + 1
        pruned = 100.0 * (1.0 - bits.mean())
        rows.append((f"{spec.kind}{idx}", float(pruned)))
    return rows


def prune_lwm_baseline(network: Network, target_fraction: float) -> BinaryMask:
    """Global least-weight-magnitude mask: retain the top-k' weights by |theta|."""
    if not 0.0 <= target_fraction < 1.0:
        raise ContractError("target_fraction must lie in [0, 1)")
    flat = np.concatenate([w.data.ravel() for w in network.weights])
    k_prime = target_retained(flat.size, target_fraction)
    order = np.argsort(-np.abs(flat), kind="stable")
    bits = np.zeros(flat.size)
    bits[order[:k_prime]] = 1.0
    return BinaryMask.from_flat(bits, [w.shape for w in network.weights])
