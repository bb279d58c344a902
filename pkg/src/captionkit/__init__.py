"""From-scratch ViT encoder / GPT-2-style decoder image captioning at desk scale."""

from .model import ModelConfig, init_params
from .tensor import Tape, Tensor, grad_check
from .train import TrainConfig, train

__all__ = ["ModelConfig", "Tape", "Tensor", "TrainConfig", "grad_check", "init_params", "train"]
__version__ = "0.1.0"
