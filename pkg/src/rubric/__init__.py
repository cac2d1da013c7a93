"""Desk-scale multi-trait essay-quality regression.

A from-scratch transformer encoder with per-trait attention-pooling heads,
adversarial weight perturbation training, and MCRMSE-scored multilabel-
stratified cross-validation. Pure numpy, 64-bit, fully seeded.
"""

__version__ = "0.1.0"

from .data import TARGETS, EssayRecord, Vocabulary, build_vocab, load_csv, synth_corpus
from .encoder import ModelSpec
from .heads import clamp_to_score_lattice
from .metrics import MetricsReport, mcrmse
from .model import Model
from .training import TrainConfig, TrainReport, fit
from .crossval import FoldPlan, run_ablation, run_cv, stratified_kfold
from .tensor import Tensor

__all__ = [
    "TARGETS",
    "EssayRecord",
    "FoldPlan",
    "MetricsReport",
    "Model",
    "ModelSpec",
    "Tensor",
    "TrainConfig",
    "TrainReport",
    "Vocabulary",
    "build_vocab",
    "clamp_to_score_lattice",
    "fit",
    "load_csv",
    "mcrmse",
    "run_ablation",
    "run_cv",
    "stratified_kfold",
    "synth_corpus",
]
