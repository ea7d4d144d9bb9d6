from .candidates import (
    ALL_KINDS,
    DILATION,
    ConvTransformation,
    PoolTransformation,
    SkipConnect,
    TransformationKind,
    VggBaselineBlock,
    apply_transformation,
    build_candidate_set,
    downsampled_length,
    make_transformation,
)
from .layers import LSTM, BatchNorm2d, BiLSTM, ConvBlock, Linear, reverse_within_length
from .module import Module, ModuleList, Parameter, count_parameters

__all__ = [
    "ALL_KINDS", "DILATION", "ConvTransformation", "PoolTransformation", "SkipConnect",
    "TransformationKind", "VggBaselineBlock", "apply_transformation", "build_candidate_set",
    "downsampled_length", "make_transformation", "LSTM", "BatchNorm2d", "BiLSTM", "ConvBlock",
    "Linear", "reverse_within_length", "Module", "ModuleList", "Parameter", "count_parameters",
]
