"""Robust neural-network pruning toolkit.

Sparsifies pretrained networks under joint accuracy, robustness, and
capacity pressure via dual ascent on a relaxed per-weight mask, then
restores performance with adversarial knowledge distillation. Ships a
small float64 autodiff engine, attack generation (FGSM, epsilon-cycling
FGSM, PGD), structural mask analysis, and an evaluation harness.
"""

from .attacks import AttackSpec, fgsm, perturb_looping, pgd
from .data import Dataset, load_idx, make_digits, make_synthetic, split
from .errors import (CheckpointError, ConfigError, ContractError,
                     DataFormatError, DivergenceError, MaskViolationError,
                     NumericError, ShapeError, StageError)
from .evaluate import (EvalReport, boundary_distance_stats, evaluate_eba,
                       evaluate_era, multi_seed_run, pgd_strength_sweep)
from .finetune import FineTuneConfig, fine_tune
from .losses import (KDCoefficients, LagrangianState, adversarial_proxy,
                     cross_entropy, dual_ascent_update, kd_finetune_loss,
                     lagrangian_loss, pruning_proxy)
from .model import (BinaryMask, LayerSpec, MaskedModel, Network,
                    binarize_mask, cnn_arch, load_checkpoint, mlp_arch,
                    save_checkpoint, softmax_at_temperature)
from .pruning import (ConnectivityReport, PruneRunConfig, PruneTrace,
                      connectivity_check, magnitude_separation,
                      per_layer_sparsity, prune, prune_lwm_baseline)
from .tensor import Adam, Tensor

__version__ = "0.1.0"
