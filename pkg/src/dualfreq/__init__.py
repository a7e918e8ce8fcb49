"""Dual-branch (pixel + log-spectrum) CNN for detecting AI-generated images, in numpy."""

from .data import Dataset, load_cifake, load_records, synth_spectral_dataset
from .estimator import DualBranchClassifier, LogSpectrumTransformer
from .model import DualBranchNet, ModelConfig, load_checkpoint, save_checkpoint
from .train import Metrics, Trainer, TrainConfig, evaluate

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DualBranchClassifier",
    "DualBranchNet",
    "LogSpectrumTransformer",
    "Metrics",
    "ModelConfig",
    "TrainConfig",
    "Trainer",
    "evaluate",
    "load_checkpoint",
    "load_cifake",
    "load_records",
    "save_checkpoint",
    "synth_spectral_dataset",
]
