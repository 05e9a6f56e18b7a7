"""Estimate CSI amplitudes from compressed beamforming feedback with a numpy U-Net.

The pipeline: simulate multipath CSI, derive the right singular vectors a station
would feed back, pack them into frequency-grouped samples, train a small
encoder/decoder, and score it with the mean per-subcarrier Frobenius error.
"""

from .bfm import compute_bfm, normalize_phase, svd
from .channel import SimConfig, load_profile, simulate_csi
from .dataset import dataset_from_csi, generate_dataset, load_dataset, save_dataset
from .estimator import ModelSpec, build_model, forward, load_checkpoint, predict, save_checkpoint
from .evaluation import EvalReport, Experiment, evaluate, frobenius_error, run_comparison, subcarrier_sweep
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "EvalReport", "Experiment", "ModelSpec", "SimConfig", "TrainConfig",
    "build_model", "compute_bfm", "dataset_from_csi", "evaluate", "forward", "frobenius_error",
    "generate_dataset", "load_checkpoint", "load_dataset", "load_profile", "normalize_phase",
    "predict", "run_comparison", "save_checkpoint", "save_dataset", "simulate_csi", "subcarrier_sweep",
    "svd", "train",
]
