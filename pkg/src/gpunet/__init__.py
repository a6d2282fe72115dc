"""U-Net / Ghost U-Net / GPU-Net: a from-scratch CPU segmentation stack.

Rank-4 tensor primitives with hand-written backward passes, ghost and GP
blocks, the three-model zoo, an analytic cost model, segmentation metrics,
netpbm data tooling, a BCE trainer and a CLI.
"""

from .costs import (
    CostReport,
    flops_conv,
    flops_gp,
    model_cost,
    params_conv,
    params_gp,
    ratio_flops,
    ratio_params,
)
from .data import (
    Sample,
    SplitSpec,
    load_dataset,
    load_image,
    resize_bilinear,
    resize_mask,
    save_dataset,
    save_image,
    split_dataset,
    synth_shapes,
)
from .dtypes import dtype, dtype_context, set_dtype
from .errors import (
    CheckpointError,
    DatasetError,
    DivergenceError,
    GpunetError,
    ImageFormatError,
    NonFiniteError,
    ShapeError,
    SpecError,
)
from .metrics import ConfusionCounts, accuracy, binarize, confusion, f1, jaccard, metrics_record
from .models import DEFAULT_WIDTHS, MODEL_NAMES, ModelConfig, UNet, build_model, config_for
from .specs import BneckSpec, ConvSpec, GP_BANK, GhostSpec, PoolSpec, TConvSpec, ghost_bank
from .train import (
    TrainConfig,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "BneckSpec",
    "CheckpointError",
    "ConfusionCounts",
    "ConvSpec",
    "CostReport",
    "DatasetError",
    "DEFAULT_WIDTHS",
    "DivergenceError",
    "GP_BANK",
    "GhostSpec",
    "GpunetError",
    "ImageFormatError",
    "MODEL_NAMES",
    "ModelConfig",
    "NonFiniteError",
    "PoolSpec",
    "Sample",
    "ShapeError",
    "SpecError",
    "SplitSpec",
    "TConvSpec",
    "TrainConfig",
    "UNet",
    "accuracy",
    "binarize",
    "build_model",
    "confusion",
    "config_for",
    "dtype",
    "dtype_context",
    "evaluate",
    "f1",
    "flops_conv",
    "flops_gp",
    "ghost_bank",
    "jaccard",
    "load_checkpoint",
    "load_dataset",
    "load_image",
    "metrics_record",
    "model_cost",
    "params_conv",
    "params_gp",
    "ratio_flops",
    "ratio_params",
    "resize_bilinear",
    "resize_mask",
    "save_checkpoint",
    "save_dataset",
    "save_image",
    "set_dtype",
    "split_dataset",
    "synth_shapes",
    "train",
    "__version__",
]
