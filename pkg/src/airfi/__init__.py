"""Domain-generalizing WiFi CSI gesture recognition.

Adversarial autoencoder codes, kernel-MMD alignment across source
environments, data- and feature-level augmentation, and few-shot adaptation,
plus a seeded synthetic multi-environment CSI benchmark.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ABLATION_ARMS, AirFiConfig, arm_config, load_config
from .csi_core import CsiSample, Dataset, SplitPlan, load_dataset, save_dataset, split_leave_one_env
from .evaluation import AccuracyTable, evaluate, export_features, run_ablation_suite
from .synth import GenConfig, generate_dataset
from .training import TrainedModel, fewshot_adapt, select_fewshot_samples, train

__version__ = "0.1.0"

__all__ = [
    "ABLATION_ARMS", "AccuracyTable", "AirFiConfig", "CsiSample", "Dataset", "GenConfig", "SplitPlan",
    "TrainedModel", "arm_config", "evaluate", "export_features", "fewshot_adapt", "generate_dataset",
    "load_checkpoint", "load_config", "load_dataset", "run_ablation_suite", "save_checkpoint", "save_dataset",
    "select_fewshot_samples", "split_leave_one_env", "train",
]
