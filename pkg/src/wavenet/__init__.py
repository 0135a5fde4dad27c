"""Wave network: a small text classifier built on complex-vector token representations."""

from .core_math import Tensor, grad_check, no_grad
from .model import ModelConfig, init_params, model_forward
from .wave_repr import (
    ComplexRepr,
    global_semantics,
    interfere,
    interference_intensity,
    modulate,
    phase_matrix,
    polar_oracle_combine,
    to_complex,
)

__version__ = "0.1.0"
