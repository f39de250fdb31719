"""Text-conditioned universal image restoration: synthetic degradations,
description-driven context modeling, a modulated U-shaped restorer, training
and evaluation harnesses, plus a CLI and an HTTP session service."""

from .degrade import (
    DatasetManifest,
    DegradationSpec,
    LightParams,
    RainParams,
    build_dataset,
    describe,
    synthesize_pair,
)
from .evalkit import psnr, run_ablation, run_text_impact, ssim
from .pipeline import ModelConfig, RestorationModel, build_model, default_config, toy_config
from .textio import HashTextEncoder, TextFeature, tokenize
from .train import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train_stage

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "DatasetManifest",
    "DegradationSpec",
    "HashTextEncoder",
    "LightParams",
    "ModelConfig",
    "RainParams",
    "RestorationModel",
    "TextFeature",
    "TrainConfig",
    "build_dataset",
    "build_model",
    "default_config",
    "describe",
    "load_checkpoint",
    "psnr",
    "run_ablation",
    "run_text_impact",
    "save_checkpoint",
    "ssim",
    "synthesize_pair",
    "tokenize",
    "toy_config",
    "train_stage",
    "__version__",
]
