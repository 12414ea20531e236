"""Ready-made desk-scale experiment configurations.

These are the calibrated recipes behind the reproduction suites and the
acceptance checks: a procedural-digit MLP pipeline, its CNN sibling, and a
tiny linear toy for exhaustive comparisons. All knobs can still be
overridden per run.
"""

from __future__ import annotations

from .config import ExperimentConfig

EVAL_EPSILON = 0.05   # L-inf budget where adversarial training separates
                      # clearly from clean training on the digit corpus
TRAIN_EPSILON = 0.25  # fine-tuning attack budget; larger than the eval
                      # budget so robust training shapes real trade-offs


def desk_mlp(seed: int, out_dir: str, target: float = 0.90,
             variant: str = "modified-kd") -> ExperimentConfig:
    """Digit-corpus MLP pipeline: pretrain, prune to `target`, distill."""
    tight = target >= 0.95
    return ExperimentConfig.from_dict({
        "seed": seed,
        "out_dir": out_dir,
        "dataset": {"kind": "digits", "n": 5000, "seed": 0,
                    "split": [0.8, 0.0, 0.2], "split_seed": 0},
        "architecture": {"kind": "mlp", "input_size": 784,
                         "hidden": [256, 128], "classes": 10,
                         "input_shape": [1, 28, 28]},
        "pretrain": {"epochs": 8, "lr": 1e-3, "batch_size": 128},
        "prune": {"target_fraction": target,
                  "max_epochs": 60 if tight else 80,
                  "lr": 0.02,
                  "rho_schedule": [1e-6 if tight else 3e-7],
                  "batch_size": 128,
                  "soft_threshold": 0.05,
                  "trainable_biases": False},
        "finetune": {"variant": variant,
                     "coefficients": {"alpha": 0.45, "beta": 0.10,
                                      "gamma": 0.45, "temperature": 4.0,
                                      "epsilon_max": TRAIN_EPSILON},
                     "max_epochs": 60, "patience": 20, "lr": 2e-3,
                     "batch_size": 128, "val_subsample": 300,
                     "val_attack": {"family": "pgd",
                                    "epsilon_max": EVAL_EPSILON,
                                    "num_steps": 5}},
        "evaluate": {"attack": {"family": "pgd", "epsilon_max": EVAL_EPSILON,
                                "num_steps": 10},
                     "sweep": False,
                     "sweep_steps": [10, 50, 100]},
    })


def desk_cnn(seed: int, out_dir: str, target: float = 0.99) -> ExperimentConfig:
    """Digit-corpus CNN pipeline used for the connectivity experiments."""
    return ExperimentConfig.from_dict({
        "seed": seed,
        "out_dir": out_dir,
        "dataset": {"kind": "digits", "n": 2500, "seed": 0,
                    "split": [0.8, 0.0, 0.2], "split_seed": 0},
        "architecture": {"kind": "cnn", "input_hw": [28, 28],
                         "in_channels": 1, "channels": [8, 16], "kernel": 3,
                         "classes": 10},
        "pretrain": {"epochs": 6, "lr": 2e-3, "batch_size": 64},
        "prune": {"target_fraction": target, "max_epochs": 40, "lr": 0.02,
                  "rho_schedule": [3e-5], "batch_size": 64,
                  "soft_threshold": 0.05, "trainable_biases": False},
        "finetune": {"variant": "modified-kd",
                     "coefficients": {"alpha": 0.45, "beta": 0.10,
                                      "gamma": 0.45, "temperature": 4.0,
                                      "epsilon_max": TRAIN_EPSILON},
                     "max_epochs": 40, "patience": 15, "lr": 2e-3,
                     "batch_size": 64, "val_subsample": 200,
                     "val_attack": {"family": "pgd",
                                    "epsilon_max": EVAL_EPSILON,
                                    "num_steps": 5}},
        "evaluate": {"attack": {"family": "pgd", "epsilon_max": EVAL_EPSILON,
                                "num_steps": 10},
                     "sweep": False,
                     "sweep_steps": [10, 50, 100]},
    })


def toy_linear(seed: int, out_dir: str, target: float = 0.5) -> ExperimentConfig:
    """Six-weight linear classifier on Gaussian blobs; exhaustively checkable."""
    return ExperimentConfig.from_dict({
        "seed": seed,
        "out_dir": out_dir,
        "dataset": {"kind": "gaussian-blobs", "n": 90, "noise": 0.15,
                    "seed": 0, "classes": 3, "split": [1.0, 0.0, 0.0],
                    "split_seed": 0},
        "architecture": {"kind": "dense-toy", "input_size": 2, "hidden": [],
                         "classes": 3},
        "pretrain": {"epochs": 120, "lr": 0.05, "batch_size": 32},
        "prune": {"target_fraction": target, "max_epochs": 60, "lr": 0.02,
                  "rho_schedule": [0.1], "batch_size": 32,
                  "trainable_biases": False},
        "finetune": {"variant": "modified-kd",
                     "coefficients": {"epsilon_max": 0.1},
                     "max_epochs": 10, "patience": 10, "lr": 0.01,
                     "batch_size": 32, "val_subsample": 64},
        "evaluate": {"attack": {"family": "pgd", "epsilon_max": 0.1,
                                "num_steps": 10}},
    })
