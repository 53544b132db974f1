"""Multiplicative relative-position coefficients for attention, with a numpy toy transformer,
learning-curve fitting and corpus distance statistics."""

__version__ = "0.1.0"

from .attention import AttentionOptions, attention_backward, attention_forward
from .estimator import AgfSeq2Seq
from .model import ModelConfig, OptimizerConfig, Seq2SeqModel, build_model, evaluate, train
from .poscoeff import PositionalField, agf_coeff, alibi_bias, build_coeff_matrix
from .powerlaw import (
    AsymptoticPowerRegressor,
    DuaneRegressor,
    ExponentialDecayRegressor,
    PowerDecayRegressor,
    compare_power_exp,
    deep_smoothing_ratio,
    fit_asymptotic_power,
    fit_duane,
)

__all__ = [
    "__version__",
    "AttentionOptions",
    "attention_forward",
    "attention_backward",
    "AgfSeq2Seq",
    "ModelConfig",
    "OptimizerConfig",
    "Seq2SeqModel",
    "build_model",
    "train",
    "evaluate",
    "PositionalField",
    "agf_coeff",
    "alibi_bias",
    "build_coeff_matrix",
    "AsymptoticPowerRegressor",
    "DuaneRegressor",
    "ExponentialDecayRegressor",
    "PowerDecayRegressor",
    "compare_power_exp",
    "deep_smoothing_ratio",
    "fit_asymptotic_power",
    "fit_duane",
]
