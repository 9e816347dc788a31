"""3d channel-separated convolution kernels and the model analyzer."""

try:
    # installed wheels place the extension inside the package
    from ._csn3d import *  # noqa: F401,F403
    from ._csn3d import (
        ConvSpec,
        Model,
        arch_names,
        build_model,
        check_table2,
        conv3d_backward,
        conv3d_forward,
        gradcheck,
        layer_stats,
        lr_at,
        model_report_json,
        model_totals,
        softmax_xent,
        sweep,
    )
except ImportError:
    # development builds put _csn3d on sys.path next to the package
    from _csn3d import (
        ConvSpec,
        Model,
        arch_names,
        build_model,
        check_table2,
        conv3d_backward,
        conv3d_forward,
        gradcheck,
        layer_stats,
        lr_at,
        model_report_json,
        model_totals,
        softmax_xent,
        sweep,
    )

__all__ = [
    "ConvSpec",
    "Model",
    "arch_names",
    "build_model",
    "check_table2",
    "conv3d_backward",
    "conv3d_forward",
    "gradcheck",
    "layer_stats",
    "lr_at",
    "model_report_json",
    "model_totals",
    "softmax_xent",
    "sweep",
]
