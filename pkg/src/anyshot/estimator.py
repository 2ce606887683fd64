"""Scikit-learn style front door for the feature-generating pipeline.

``FeatureGenerator`` hides the dataset plumbing: fit on labeled features
plus a class-embedding table (and optionally an unlabeled pool), then draw
synthetic features for any embedded class.  Constructor arguments mirror
``TrainingConfig`` one to one, so `get_params`/`set_params`/`clone` behave
like any other estimator.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import Dataset, SplitSpec, apply_rescale, fit_rescale
from .errors import ConfigError, ContractError
from .evaluation import synthesize_features
from .training import TrainingConfig, train
from .validation import as_float_matrix, as_label_vector, check_matching_width


class FeatureGenerator(BaseEstimator):
    """Conditional feature generator with an adversarially trained backbone.

    Features are min-max rescaled into [0, 1] on the labeled rows during
    fit; ``transform`` applies the same mapping to new rows so real and
    synthetic features share one space.
    """

    def __init__(self, variant="vaegan", mode="inductive", learning_rate=1e-3,
                 beta1=0.5, beta2=0.999, critic_iters=5, batch_size=64,
                 max_epochs=30, penalty=10.0, adversarial=1000.0, kl=1.0,
                 hidden_dim=4096, latent_dim=None, leaky_slope=0.2, seed=0,
                 patience=10, val_fraction=0.1, val_synth_per_class=50,
                 val_classifier_epochs=200):
        self.variant = variant
        self.mode = mode
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.critic_iters = critic_iters
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.penalty = penalty
        self.adversarial = adversarial
        self.kl = kl
        self.hidden_dim = hidden_dim
        self.latent_dim = latent_dim
        self.leaky_slope = leaky_slope
        self.seed = seed
        self.patience = patience
        self.val_fraction = val_fraction
        self.val_synth_per_class = val_synth_per_class
        self.val_classifier_epochs = val_classifier_epochs

    def _config(self):
        return TrainingConfig.from_dict(self.get_params())

    def fit(self, X, y, class_embeddings=None, X_unlabeled=None):
        """Train on labeled rows; the pool feeds the unconditional critic.

        ``class_embeddings`` is the full table, one row per class id;
        classes that never appear in ``y`` are treated as novel.
        """
        config = self._config()
        if class_embeddings is None:
            raise ContractError("fit needs the class_embeddings table")
        X = as_float_matrix(X, "X")
        y = as_label_vector(y, X.shape[0], "y")
        emb = as_float_matrix(class_embeddings, "class_embeddings")
        if y.size and (y.min() < 0 or y.max() >= emb.shape[0]):
            raise ContractError("y contains ids outside the embedding table")

        seen = np.unique(y)
        novel = np.setdiff1d(np.arange(emb.shape[0]), seen)
        if config.mode == "transductive":
            if X_unlabeled is None:
                raise ConfigError("transductive mode needs X_unlabeled")
            if novel.size == 0:
                raise ConfigError(
                    "transductive mode needs at least one class absent from y"
                )
        if X_unlabeled is not None:
            X_unlabeled = as_float_matrix(X_unlabeled, "X_unlabeled")
            check_matching_width(X, X_unlabeled, "X", "X_unlabeled")
            features = np.concatenate([X, X_unlabeled])
            # placeholder ids: the pool exposes no label view, any valid id works
            labels = np.concatenate([y, np.full(len(X_unlabeled), y[0])])
            pool_idx = np.arange(len(X), len(features))
        else:
            features, labels = X, y
            pool_idx = np.empty(0, dtype=np.int64)

        splits = SplitSpec(
            train_seen=np.arange(len(X)),
            test_seen=np.empty(0, dtype=np.int64),
            test_novel=np.empty(0, dtype=np.int64),
            unlabeled=pool_idx,
        )
        dataset = Dataset(features, labels, emb, seen, novel, splits, rescale=True)

        self.result_ = train(dataset, config)
        self.models_ = self.result_.models
        self.classes_ = np.arange(emb.shape[0])
        self.seen_classes_ = seen
        self.novel_classes_ = novel
        self.class_embeddings_ = emb
        self.mins_, self.span_ = fit_rescale(X)
        self.n_features_in_ = X.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "models_"):
            raise NotFittedError("FeatureGenerator is not fitted yet")

    def transform(self, X):
        """Map rows into the fitted [0, 1] feature space."""
        self._check_fitted()
        X = as_float_matrix(X, "X", allow_empty=True)
        if X.shape[1] != self.n_features_in_:
            raise ContractError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        return apply_rescale(X, self.mins_, self.span_)

    def sample(self, classes=None, n_per_class=300, seed=0):
        """Synthetic (features, labels); defaults to the novel classes."""
        self._check_fitted()
        if classes is None:
            classes = self.novel_classes_
        classes = np.asarray(classes, dtype=np.int64)
        if classes.size == 0:
            raise ContractError("no classes to sample; pass classes explicitly")
        rng = np.random.default_rng(seed)
        return synthesize_features(
            self.models_.generator, self.class_embeddings_, classes,
            n_per_class, rng,
        )
