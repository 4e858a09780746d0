"""Deep transformation models for semi-structured distributional regression.

Ordinal, continuous and interval-censored outcomes are modeled as
F_Y(y|x) = F_Z(h(y|x)) with a monotone transformation h decomposed into
intercept and shift terms, each backed by a trainable network component.
"""

from dtmkit._core import (
    Model,
    accuracy,
    auc,
    brier,
    ensemble_predict,
    fit,
    generate_synthetic,
    latent_cdf,
    latent_quantile,
    model_names,
    nll,
    qwk,
    rps,
)

__all__ = [
    "Model",
    "accuracy",
    "auc",
    "brier",
    "ensemble_predict",
    "fit",
    "generate_synthetic",
    "latent_cdf",
    "latent_quantile",
    "model_names",
    "nll",
    "qwk",
    "rps",
]

__version__ = "0.1.0"
