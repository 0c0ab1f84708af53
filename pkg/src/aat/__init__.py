"""Asymmetric adversarial training of three-way robust/non-robust models.

A small numpy-based framework: a reverse-mode autodiff tensor core, a
dual-encoder model with a shared classifier head, PGD attacks, the
asymmetric training objectives, disentanglement and detection metrics,
and an exact enumeration testbed for the accuracy-robustness trade-off.
"""

from .attack import AttackConfig, pgd, pseudo_label
from .data import Dataset, batches, load_checkpoint, load_mnist_idx, save_checkpoint, subset
from .dilemma import DilemmaSpec, LinearSignClassifier
from .evaluation import EvalReport, evaluate
from .model import BackboneSpec, ThreeWayModel, dilemma_backbone, mnist_backbone
from .tensor import Tensor, backward
from .training import LossConfig, TrainConfig, train

__all__ = [
    "AttackConfig", "BackboneSpec", "Dataset", "DilemmaSpec", "EvalReport",
    "LinearSignClassifier", "LossConfig", "Tensor", "ThreeWayModel",
    "TrainConfig", "backward", "batches", "dilemma_backbone", "evaluate",
    "load_checkpoint", "load_mnist_idx", "mnist_backbone", "pgd",
    "pseudo_label", "save_checkpoint", "subset", "train",
]

__version__ = "0.1.0"
