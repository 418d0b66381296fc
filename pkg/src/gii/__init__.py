"""Generalized indirect inference for discrete and mixed discrete/continuous
choice models."""
from ._backend import BACKEND
from .auxiliary import AuxiliaryDesign, AuxiliaryFit, AuxiliarySpec, DegenerateDesignError, make_spec
from .criterion import Criterion, CriterionConfig, make_criterion
from .harness import ExperimentConfig, MCResult, estimate_once, run_mc
from .inference import InferenceError, criterion_inference, sandwich
from .models import (ObservedData, ShockSet, StructuralConfig, draw_shocks, generate_observed,
                     smooth_batch, smooth_choices)
from .optimize import OptimizerConfig, OptResult, minimize
from .smoothing import JackknifePlan, KernelSpec, jackknife_combine, jackknife_weights

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "AuxiliaryDesign", "AuxiliaryFit", "AuxiliarySpec", "DegenerateDesignError",
    "make_spec", "Criterion", "CriterionConfig", "make_criterion", "ExperimentConfig", "MCResult",
    "estimate_once", "run_mc", "InferenceError", "criterion_inference", "sandwich",
    "ObservedData", "ShockSet", "StructuralConfig", "draw_shocks", "generate_observed",
    "smooth_batch", "smooth_choices", "OptimizerConfig", "OptResult", "minimize",
    "JackknifePlan", "KernelSpec", "jackknife_combine", "jackknife_weights",
]
