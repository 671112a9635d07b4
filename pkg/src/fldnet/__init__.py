"""FLDNet polyp segmentation on a from-scratch numpy autodiff kernel."""
from .model import FLDNet, LCMConfig, ModelConfig
from .encoder import EncoderConfig
from .tensor import Tensor, backward, no_grad, precision, set_precision

__all__ = ["FLDNet", "LCMConfig", "ModelConfig", "EncoderConfig", "Tensor", "backward",
           "no_grad", "precision", "set_precision"]
__version__ = "0.1.0"
