"""Surgical skill assessment: CNN/BiLSTM classifier, MC-dropout uncertainty,
self-training domain adaptation and learning-curve statistics."""

from ._kinadapt import (
    ConfigError,
    DataError,
    Error,
    Model,
    ModelConfig,
    NumericError,
    ShapeError,
    __version__,
    downsample,
    f_cdf,
    init_model,
    learning_curve,
    learning_curve_svg,
    lr_schedule,
    mc_predict,
    predict,
    predictive_entropy,
    regularized_incomplete_beta,
    run_cli,
    studentized_range_cdf,
    synth_generate,
    tukey_hsd,
    two_way_anova,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Error",
    "Model",
    "ModelConfig",
    "NumericError",
    "ShapeError",
    "__version__",
    "downsample",
    "f_cdf",
    "init_model",
    "learning_curve",
    "learning_curve_svg",
    "lr_schedule",
    "mc_predict",
    "predict",
    "predictive_entropy",
    "regularized_incomplete_beta",
    "run_cli",
    "studentized_range_cdf",
    "synth_generate",
    "tukey_hsd",
    "two_way_anova",
]
