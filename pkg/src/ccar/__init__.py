"""Class-confidence aware loss reweighting for long-tailed classification."""

from .losses import Base, ClassStats, LossConfig, LossOutput, total_loss_and_grad
from .weighting import (
    adaptive_capacity,
    derivative_jump,
    dual_phase_frequency,
    modulation_factor,
    omega_derivative,
    omega_weight,
)

__version__ = "0.1.0"
