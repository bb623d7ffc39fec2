"""Latent representation search and the optimizers that drive it."""

from .optimizers import (
    OPTIMIZER_KINDS,
    AdagradState,
    AdamState,
    LbfgsState,
    OptimizerConfig,
    SgdmState,
    adagrad_step,
    adam_step,
    lbfgs_step,
    sgdm_step,
    two_loop_direction,
)
from .search import InversionResult, LatentObjective, invert, steps_to_threshold, trajectory_rows

__all__ = [
    "OPTIMIZER_KINDS",
    "AdagradState",
    "AdamState",
    "InversionResult",
    "LatentObjective",
    "LbfgsState",
    "OptimizerConfig",
    "SgdmState",
    "adagrad_step",
    "adam_step",
    "invert",
    "lbfgs_step",
    "sgdm_step",
    "steps_to_threshold",
    "trajectory_rows",
    "two_loop_direction",
]
