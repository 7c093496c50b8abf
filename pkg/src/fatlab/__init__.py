"""fatlab: a desk-scale fast-adversarial-training laboratory.

Implements FGSM/PGD adversarial training with prior-guided adversarial
initialization (previous batch, previous epoch, and epoch-momentum
buffers) plus the paired prediction-distance regularizer, on top of a
small numpy reverse-mode autodiff engine.
"""

from .attacks import (
    AttackConfig,
    fgsm_step,
    pgd10_config,
    pgd_attack,
    project_linf,
    random_init,
    sign_fn,
)
from .checkpoint import load_checkpoint, load_model, save_checkpoint
from .data import BatchIterator, Dataset, load_cifar_binary, load_idx, synth_blobs, synth_shapes
from .models import Model, init_model
from .optim import SGDState, make_sgd, sgd_step
from .priors import BatchPrior, EpochPrior, MomentumEpochPrior, bp_round, ep_round, mep_round
from .tensor import Tensor, finite_difference_gradient, one_hot, softmax_cross_entropy
from .trainer import (
    RunRecord,
    TrainConfig,
    TrainResult,
    checkpoint_policy,
    detect_catastrophic_overfitting,
    evaluate,
    regularized_loss,
    run_training,
    train_epoch,
)

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "BatchIterator", "BatchPrior", "Dataset", "EpochPrior", "Model",
    "MomentumEpochPrior", "RunRecord", "SGDState", "Tensor", "TrainConfig", "TrainResult",
    "bp_round", "checkpoint_policy", "detect_catastrophic_overfitting", "ep_round",
    "evaluate", "fgsm_step", "finite_difference_gradient", "init_model", "load_checkpoint",
    "load_cifar_binary", "load_idx", "load_model", "make_sgd", "mep_round", "one_hot",
    "pgd10_config", "pgd_attack", "project_linf", "random_init", "regularized_loss",
    "run_training", "save_checkpoint", "sgd_step", "sign_fn", "softmax_cross_entropy",
    "synth_blobs", "synth_shapes", "train_epoch",
]
