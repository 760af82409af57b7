"""Light-weight channel-wise feature-pyramid segmentation toolchain."""

from .blocks import (
    CfpModule,
    CfpModuleConfig,
    FpChannel,
    FpChannelConfig,
    allocate_fp_filters,
    assign_channel_dilations,
    build_cfp_module,
    build_fp_channel,
    effective_kernel_size,
    hff_combine,
)
from .data import (
    FoldPlan,
    ResizePolicy,
    Sample,
    generate_synthetic_dataset,
    grouped_split,
    kfold_split,
    load_dataset,
    save_dataset,
)
from .evalbench import (
    ComplexityRow,
    CrossValReport,
    SpeedReport,
    aggregate_folds,
    benchmark_fps,
    check_reported_stats,
    complexity_report,
    cross_validate,
)
from .metrics import jaccard, mae, otsu_threshold, stability_experiment, tanimoto
from .network import (
    CfpNetM,
    ComplexityReport,
    NetworkConfig,
    UNetBaseline,
    build_cfpnet_m,
    build_unet_baseline,
    count_parameters,
    estimate_flops,
    layer_audit,
    parameter_budget_sweep,
    receptive_field,
)
from .training import TrainConfig, bce_loss, load_checkpoint, predict, save_checkpoint, train

__version__ = "0.1.0"
