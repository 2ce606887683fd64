"""Estimator-surface tests: sklearn conventions plus end-to-end sampling."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from anyshot.data import SyntheticSpec, make_synthetic, rescale_01
from anyshot.errors import ConfigError, ContractError, ShapeError
from anyshot.estimator import FeatureGenerator

FAST = dict(hidden_dim=16, batch_size=16, max_epochs=2, critic_iters=2,
            val_synth_per_class=10, val_classifier_epochs=20)


def raw_arrays(seed=0):
    """Labeled seen rows, their labels, the embedding table, unlabeled rows."""
    ds = make_synthetic(SyntheticSpec(
        n_seen=4, n_novel=2, d_x=8, d_c=4, samples_per_class=30,
        noise=0.1, seed=seed,
    ))
    return (
        ds.features_for("train_seen"),
        ds.labels_for("train_seen"),
        ds.class_embeddings,
        ds.features_for("unlabeled"),
    )


def test_sklearn_param_protocol():
    fg = FeatureGenerator(variant="gan", hidden_dim=32)
    params = fg.get_params()
    assert params["variant"] == "gan" and params["hidden_dim"] == 32
    assert clone(fg).get_params() == params
    fg.set_params(mode="transductive")
    assert fg.get_params()["mode"] == "transductive"


def test_unfitted_estimator_raises():
    fg = FeatureGenerator()
    with pytest.raises(NotFittedError):
        fg.sample([0], 1)
    with pytest.raises(NotFittedError):
        fg.transform(np.zeros((1, 4)))


def test_fit_and_sample_novel_classes():
    X, y, emb, _ = raw_arrays()
    fg = FeatureGenerator(**FAST).fit(X, y, class_embeddings=emb)
    assert list(fg.seen_classes_) == [0, 1, 2, 3]
    assert list(fg.novel_classes_) == [4, 5]
    Xs, ys = fg.sample(n_per_class=7, seed=1)
    assert Xs.shape == (14, 8)
    assert np.all((Xs > 0) & (Xs < 1))
    assert np.array_equal(ys, np.repeat([4, 5], 7))


def test_transform_matches_training_rescale():
    X, y, emb, _ = raw_arrays()
    fg = FeatureGenerator(**FAST).fit(X, y, class_embeddings=emb)
    expected = rescale_01(X, np.arange(len(X)))
    np.testing.assert_array_equal(fg.transform(X), expected)
    wide = fg.transform(X * 10.0)  # clamped into the fitted range
    assert wide.min() >= 0.0 and wide.max() <= 1.0
    with pytest.raises(ContractError, match="features"):
        fg.transform(np.zeros((2, 5)))


def test_transductive_fit_uses_the_pool():
    X, y, emb, pool = raw_arrays()
    fg = FeatureGenerator(mode="transductive", **FAST)
    fg.fit(X, y, class_embeddings=emb, X_unlabeled=pool)
    assert fg.result_.counters["pool_critic"] > 0
    with pytest.raises(ConfigError, match="X_unlabeled"):
        clone(fg).fit(X, y, class_embeddings=emb)


def test_transductive_needs_a_novel_class():
    X, y, emb, pool = raw_arrays()
    fg = FeatureGenerator(mode="transductive", **FAST)
    with pytest.raises(ConfigError, match="absent"):
        fg.fit(X, y, class_embeddings=emb[:4], X_unlabeled=pool)


def test_fit_input_validation():
    X, y, emb, _ = raw_arrays()
    fg = FeatureGenerator(**FAST)
    with pytest.raises(ContractError, match="class_embeddings"):
        fg.fit(X, y)
    with pytest.raises(ShapeError):
        fg.fit(X, y[:-1], class_embeddings=emb)
    with pytest.raises(ContractError, match="embedding table"):
        fg.fit(X, y + 10, class_embeddings=emb)
    with pytest.raises(ConfigError):
        FeatureGenerator(variant="nope").fit(X, y, class_embeddings=emb)


def test_sampling_unembedded_class_rejected():
    X, y, emb, _ = raw_arrays()
    fg = FeatureGenerator(**FAST).fit(X, y, class_embeddings=emb)
    with pytest.raises(ContractError, match="unknown class id"):
        fg.sample([6], 1)


def test_fit_is_deterministic():
    X, y, emb, _ = raw_arrays()
    a = FeatureGenerator(**FAST).fit(X, y, class_embeddings=emb)
    b = FeatureGenerator(**FAST).fit(X, y, class_embeddings=emb)
    Xa, _ = a.sample(n_per_class=5, seed=0)
    Xb, _ = b.sample(n_per_class=5, seed=0)
    assert Xa.tobytes() == Xb.tobytes()
