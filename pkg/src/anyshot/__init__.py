"""Feature synthesis for any-shot classification.

Train a conditional VAE-GAN on class-labeled feature vectors, then sample
synthetic features for classes with few or no labels and fit an ordinary
softmax classifier on the mix.  See the README for the full pipeline.
"""

from .data import (
    Dataset,
    SplitSpec,
    SyntheticSpec,
    load_dataset,
    make_synthetic,
    nshot_subsample,
    save_dataset,
)
from .errors import (
    AccessViolation,
    ConfigError,
    ContractError,
    DataFormatError,
    NumericError,
    ShapeError,
    UnsupportedOpError,
)
from .estimator import FeatureGenerator
from .evaluation import (
    EvalReport,
    SoftmaxClassifier,
    evaluate,
    harmonic_mean,
    per_class_top1,
    per_class_topk,
    synthesize_features,
)
from .losses import LossWeights
from .models import Models, load_checkpoint, save_checkpoint
from .training import TrainingConfig, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "AccessViolation",
    "ConfigError",
    "ContractError",
    "DataFormatError",
    "Dataset",
    "EvalReport",
    "FeatureGenerator",
    "LossWeights",
    "Models",
    "NumericError",
    "ShapeError",
    "SoftmaxClassifier",
    "SplitSpec",
    "SyntheticSpec",
    "TrainResult",
    "TrainingConfig",
    "UnsupportedOpError",
    "evaluate",
    "harmonic_mean",
    "load_checkpoint",
    "load_dataset",
    "make_synthetic",
    "nshot_subsample",
    "per_class_top1",
    "per_class_topk",
    "save_checkpoint",
    "save_dataset",
    "synthesize_features",
    "train",
]
