"""Neural-network engine and the two restoration networks."""

from .core import (
    Activation,
    AdamState,
    ConvLayerParams,
    activation,
    activation_backward,
    adam_step,
    dilated_conv2d,
    dilated_conv2d_backward,
    grad_check,
    mse_loss,
    uniform_init,
)
from .gru import (
    ConvGRUParams,
    CostReport,
    GRUVariant,
    PatchSequence,
    Traversal,
    conv_gru_backward,
    conv_gru_step,
    cost_model,
    count_parameters_gru,
    msd_gru_backward,
    msd_gru_forward,
    slice_patches,
    stitch_patches,
)
from .msd import (
    MSDConfig,
    count_parameters_msd,
    dilation_of_layer,
    msd_backward,
    msd_forward,
)

__all__ = [
    "Activation",
    "AdamState",
    "ConvLayerParams",
    "activation",
    "activation_backward",
    "adam_step",
    "dilated_conv2d",
    "dilated_conv2d_backward",
    "grad_check",
    "mse_loss",
    "uniform_init",
    "ConvGRUParams",
    "CostReport",
    "GRUVariant",
    "PatchSequence",
    "Traversal",
    "conv_gru_backward",
    "conv_gru_step",
    "cost_model",
    "count_parameters_gru",
    "msd_gru_backward",
    "msd_gru_forward",
    "slice_patches",
    "stitch_patches",
    "MSDConfig",
    "count_parameters_msd",
    "dilation_of_layer",
    "msd_backward",
    "msd_forward",
]
