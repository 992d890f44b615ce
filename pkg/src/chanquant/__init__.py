"""Layer-wise and channel-wise activation quantization with pre-scaled accumulation."""

__version__ = "0.1.0"

from .accumulate import accumulate_inloop, accumulate_layerwise, accumulate_prescaled, path_deviation
from .metrics import DistortionReport, Strategy, cosine_similarity, profile_layers, relative_error, skewness
from .quantizer import (
    Granularity,
    QuantizedActivation,
    QuantParams,
    dequantize_prescale,
    fake_quantize_ste_backward,
    fake_quantize_ste_forward,
    params_channelwise,
    params_layerwise,
    quantize,
)
from .synthgen import GenSpec, generate, resnet20_shape_preset
from .tensor import ActivationTensor, DecomposedView, channel_min_max, decompose, load_pqt, save_pqt
