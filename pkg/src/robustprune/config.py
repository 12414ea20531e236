"""Declarative experiment configuration.

One JSON file per experiment; CLI flags and --override KEY=VALUE entries are
merged on top, and the resolved result is snapshotted into the run directory
so every printed number can be re-derived. Validation errors name the
offending field.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

from .attacks import AttackSpec
from .errors import ConfigError
from .finetune import VARIANTS, FineTuneConfig
from .losses import KDCoefficients
from .model import Network, cnn_arch, mlp_arch
from .pruning import PruneRunConfig

ARCH_KINDS = ("mlp", "cnn", "dense-toy")


def build_network(arch: dict, seed: int) -> Network:
    kind = arch.get("kind", "mlp")
    if kind == "mlp":
        input_size = int(arch.get("input_size", 784))
        specs = mlp_arch(input_size=input_size,
                         hidden=tuple(arch.get("hidden", (256, 128))),
                         classes=int(arch.get("classes", 10)))
        shape = tuple(arch.get("input_shape", (input_size,)))
        return Network(specs, seed=seed, input_shape=shape)
    if kind == "cnn":
        hw = tuple(arch.get("input_hw", (28, 28)))
        in_channels = int(arch.get("in_channels", 1))
        specs = cnn_arch(input_hw=hw, in_channels=in_channels,
                         channels=tuple(arch.get("channels", (8, 16))),
                         kernel=int(arch.get("kernel", 3)),
                         classes=int(arch.get("classes", 10)))
        return Network(specs, seed=seed, input_shape=(in_channels, *hw))
    if kind == "dense-toy":
        specs = mlp_arch(input_size=int(arch.get("input_size", 2)),
                         hidden=tuple(arch.get("hidden", ())),
                         classes=int(arch.get("classes", 2)))
        return Network(specs, seed=seed)
    raise ConfigError("architecture.kind", f"unknown kind {kind!r}")


@dataclass
class ExperimentConfig:
    seed: int
    out_dir: str
    dataset: dict
    architecture: dict
    pretrain: dict = field(default_factory=dict)
    prune: dict = field(default_factory=dict)
    finetune: dict = field(default_factory=dict)
    evaluate: dict = field(default_factory=dict)

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentConfig":
        if "seed" not in raw:
            raise ConfigError("seed", "a seed is mandatory")
        try:
            seed = int(raw["seed"])
        except (TypeError, ValueError):
            raise ConfigError("seed", "must be an integer") from None
        out_dir = raw.get("out_dir")
        if not out_dir:
            raise ConfigError("out_dir", "an output directory is mandatory")
        dataset = raw.get("dataset")
        if not isinstance(dataset, dict) or "kind" not in dataset:
            raise ConfigError("dataset.kind", "a dataset kind is mandatory")
        if dataset["kind"] == "idx":
            for key in ("images", "labels"):
                if key not in dataset:
                    raise ConfigError(f"dataset.{key}", "path is required for idx data")
        arch = raw.get("architecture")
        if not isinstance(arch, dict):
            raise ConfigError("architecture", "an architecture block is mandatory")
        if arch.get("kind", "mlp") not in ARCH_KINDS:
            raise ConfigError("architecture.kind",
                              f"must be one of {ARCH_KINDS}")
        cfg = ExperimentConfig(
            seed=seed, out_dir=str(out_dir), dataset=dict(dataset),
            architecture=dict(arch),
            pretrain=dict(raw.get("pretrain", {})),
            prune=dict(raw.get("prune", {})),
            finetune=dict(raw.get("finetune", {})),
            evaluate=dict(raw.get("evaluate", {})),
        )
        # fail fast on stage blocks by building their runtime configs
        cfg.prune_config()
        cfg.finetune_config()
        cfg.attack_spec()
        return cfg

    @staticmethod
    def load(path, overrides=None, seed=None, out_dir=None) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
        raw = apply_overrides(raw, overrides or [])
        if seed is not None:
            raw["seed"] = seed
        if out_dir is not None:
            raw["out_dir"] = out_dir
        return ExperimentConfig.from_dict(raw)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "out_dir": self.out_dir,
                "dataset": self.dataset, "architecture": self.architecture,
                "pretrain": self.pretrain, "prune": self.prune,
                "finetune": self.finetune, "evaluate": self.evaluate}

    def snapshot(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def prune_config(self) -> PruneRunConfig:
        block = dict(self.prune)
        block.pop("from_scratch", None)
        block.setdefault("target_fraction", 0.9)
        block.setdefault("seed", self.seed)
        if "rho_schedule" in block:
            block["rho_schedule"] = tuple(block["rho_schedule"])
        if "attack_epsilon_set" in block and block["attack_epsilon_set"] is not None:
            block["attack_epsilon_set"] = tuple(block["attack_epsilon_set"])
        try:
            return PruneRunConfig(**block)
        except TypeError as exc:
            raise ConfigError("prune", f"bad field: {exc}") from None

    def finetune_config(self) -> FineTuneConfig:
        block = dict(self.finetune)
        block.setdefault("seed", self.seed)
        coef = block.pop("coefficients", None)
        if coef is not None:
            block["coefficients"] = KDCoefficients(**coef)
        if block.get("epsilon_set") is not None:
            block["epsilon_set"] = tuple(block["epsilon_set"])
        if isinstance(block.get("val_attack"), dict):
            block["val_attack"] = AttackSpec.from_dict(block["val_attack"])
        try:
            return FineTuneConfig(**block)
        except TypeError as exc:
            raise ConfigError("finetune", f"bad field: {exc}") from None

    def attack_spec(self) -> AttackSpec:
        block = self.evaluate.get("attack")
        if block is None:
            return AttackSpec(family="pgd", epsilon_max=8.0 / 255.0, num_steps=10)
        try:
            return AttackSpec.from_dict(block)
        except TypeError as exc:
            raise ConfigError("evaluate.attack", f"bad field: {exc}") from None


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text  # bare strings pass through


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply dotted KEY=VALUE pairs, e.g. prune.lr=0.05."""
    result = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError("override", f"expected KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        node = result
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(key, "path traverses a non-object")
        node[parts[-1]] = _parse_value(value)
    return result
