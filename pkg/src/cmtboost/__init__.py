"""Hybrid CNN-transformer (CB-Res-RBCMT) for benign/malignant ultrasound
classification, built on a small numpy autodiff engine."""

from .model import CBResRBCMTModel, ModelConfig, build_model, profile, shape_trace
from .tensor import Parameter, Tensor, backward, no_grad, precision

__all__ = ["CBResRBCMTModel", "ModelConfig", "Parameter", "Tensor", "backward", "build_model",
           "no_grad", "precision", "profile", "shape_trace"]
__version__ = "0.1.0"
