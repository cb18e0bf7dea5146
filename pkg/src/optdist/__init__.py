"""Customer-lifetime-value prediction with multiple zero-inflated lognormal sub-distributions."""
from .data import EncodedDataset, FeatureSchema, SyntheticConfig, generate_synthetic
from .estimator import FeatureEncoder, OptDistRegressor
from .metrics import MetricsReport, evaluate, mae, norm_gini, spearman_rho
from .models import MtlMseNetwork, OptDistNetwork, TwoStageNetwork, ZilnNetwork
from .training import TrainConfig, build_model, run_sweep, train, train_step

__version__ = "0.1.0"

__all__ = [
    "EncodedDataset",
    "FeatureEncoder",
    "FeatureSchema",
    "MetricsReport",
    "MtlMseNetwork",
    "OptDistNetwork",
    "OptDistRegressor",
    "SyntheticConfig",
    "TrainConfig",
    "TwoStageNetwork",
    "ZilnNetwork",
    "build_model",
    "evaluate",
    "generate_synthetic",
    "mae",
    "norm_gini",
    "run_sweep",
    "spearman_rho",
    "train",
    "train_step",
]
