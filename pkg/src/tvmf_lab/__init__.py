"""Supervised contrastive learning with heterogeneous t-vMF similarity."""

from .simcore import SimilaritySpec, kappa_from_alpha, margin_epsilon, tvmf_from_cos
from .trainer import RunHistory, TrainConfig, train

__all__ = [
    "SimilaritySpec",
    "kappa_from_alpha",
    "margin_epsilon",
    "tvmf_from_cos",
    "RunHistory",
    "TrainConfig",
    "train",
]
__version__ = "0.1.0"
