"""Unsupervised raindrop removal by iterative layer decomposition."""
from .core import DecompositionTriple, ImageTensor, TransparencyMask, compose, residual
from .estimator import RaindropRemover
from .generator import IterativeGenerator, IterationTrace, count_parameters, run_generator
from .discriminator import PatchDiscriminator, score
from .metrics import MetricReport, evaluate_pairs, psnr, ssim
from .training import TrainConfig, fit, resume, train_step

__version__ = "0.1.0"

__all__ = [
    "DecompositionTriple",
    "ImageTensor",
    "IterationTrace",
    "IterativeGenerator",
    "MetricReport",
    "PatchDiscriminator",
    "RaindropRemover",
    "TrainConfig",
    "TransparencyMask",
    "compose",
    "count_parameters",
    "evaluate_pairs",
    "fit",
    "psnr",
    "residual",
    "resume",
    "run_generator",
    "score",
    "ssim",
    "train_step",
]
