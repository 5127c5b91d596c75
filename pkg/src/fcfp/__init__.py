"""Query-aligned implicit segmentation decoding on a continuous feature pyramid."""

from .autodiff import (
    Tensor,
    backward,
    grad_check,
    no_grad,
    reset_tape,
    stop_grad,
    tape,
)
from .config import Config, load_config, parse_config_text
from .pipeline import Ablation, BaselineModel, Q2aModel
from .rng import Rng

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "backward",
    "grad_check",
    "no_grad",
    "reset_tape",
    "stop_grad",
    "tape",
    "Config",
    "load_config",
    "parse_config_text",
    "Ablation",
    "BaselineModel",
    "Q2aModel",
    "Rng",
    "__version__",
]
