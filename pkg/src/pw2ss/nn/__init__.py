"""Minimal float64 reverse-mode autodiff, layers, AdamW and checkpoints."""

from . import autograd as ops
from .autograd import Parameter, Tape, Tensor, backward, current_tape
from .checkpoint import FORMAT_VERSION, Checkpoint, load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check, relative_error
from .layers import MLP, LayerNorm, Linear, Module, xavier_uniform
from .optim import AdamW, OptimizerConfig, adamw_step, lr_schedule, steps_per_epoch

__all__ = [
    "ops", "Parameter", "Tape", "Tensor", "backward", "current_tape",
    "FORMAT_VERSION", "Checkpoint", "load_checkpoint", "save_checkpoint",
    "GradCheckReport", "grad_check", "relative_error",
    "MLP", "LayerNorm", "Linear", "Module", "xavier_uniform",
    "AdamW", "OptimizerConfig", "adamw_step", "lr_schedule", "steps_per_epoch",
]
