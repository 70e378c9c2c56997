"""Numpy network, losses, checkpoints and gradient checks for the regressor."""

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .layers import DTYPE, BatchNorm1d, Conv2D, Flatten, Linear, ReLU, ResidualBlock, Sequential, Sigmoid
from .model import Branch, Discriminator, NetworkConfig, SGDMomentum

__all__ = [
    "DTYPE", "BatchNorm1d", "Branch", "CheckpointError", "Conv2D", "Discriminator", "Flatten",
    "Linear", "NetworkConfig", "ReLU", "ResidualBlock", "SGDMomentum", "Sequential", "Sigmoid",
    "load_checkpoint", "save_checkpoint",
]
