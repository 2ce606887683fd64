"""Classifier training, per-class metrics, and the four evaluation protocols.

The protocols share one recipe: synthesize features for classes that lack
labeled data, train a linear softmax classifier on a mix of real and
synthetic features, then score held-out rows with per-class averaged top-1
accuracy (every class counts equally, however many test rows it has).

* ``zsl``  -- classifier over novel classes only, synthetic features only.
* ``gzsl`` -- classifier over all classes: real seen + synthetic novel
  features (synthetic seen augmentation is off by default); reports seen
  and novel accuracy plus their harmonic mean.
* ``fsl``  -- like zsl plus ``shots`` real rows per novel class promoted
  into the classifier's training set.
* ``gfsl`` -- like gzsl plus the promoted rows.

Scoring for the restricted protocols masks non-candidate classes before the
argmax, so a novel-only classifier can never emit a seen label.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from .data import nshot_subsample
from .errors import ContractError
from .optim import Adam
from .seeding import stream

PROTOCOLS = ("zsl", "gzsl", "fsl", "gfsl")


class SoftmaxClassifier(BaseEstimator, ClassifierMixin):
    """Linear softmax classifier trained full-batch with Adam.

    Weights start at zero and the whole batch is used every step, so a fit
    is deterministic with no randomness involved.  Training stops early
    once the loss stops improving by ``tol`` for ``patience`` epochs.
    """

    def __init__(self, epochs=500, lr=1e-3, patience=25, tol=1e-7):
        self.epochs = epochs
        self.lr = lr
        self.patience = patience
        self.tol = tol

    def fit(self, X, y, classes=None, allow_missing=False):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ContractError(f"bad classifier input shapes {X.shape}, {y.shape}")
        if X.shape[0] == 0:
            raise ContractError("cannot fit a classifier on zero rows")
        self.classes_ = np.unique(y if classes is None else np.asarray(classes))
        if np.setdiff1d(y, self.classes_).size:
            raise ContractError("labels outside the declared class set")
        counts = np.bincount(
            np.searchsorted(self.classes_, y), minlength=len(self.classes_)
        )
        if not allow_missing and np.any(counts == 0):
            empty = self.classes_[counts == 0]
            raise ContractError(f"declared classes with zero samples: {empty.tolist()}")

        n, d = X.shape
        k = len(self.classes_)
        target = np.searchsorted(self.classes_, y)
        onehot = np.zeros((n, k))
        onehot[np.arange(n), target] = 1.0

        weight = ad.Parameter("softmax.weight", np.zeros((k, d)))
        bias = ad.Parameter("softmax.bias", np.zeros(k))
        opt = Adam([weight, bias], lr=self.lr, beta1=0.9, beta2=0.999)

        self.loss_curve_ = []
        best = np.inf
        stale = 0
        for _ in range(self.epochs):
            scores = X @ weight.value.T + bias.value
            scores -= scores.max(axis=1, keepdims=True)
            log_z = np.log(np.exp(scores).sum(axis=1))
            loss = float(np.mean(log_z - scores[np.arange(n), target]))
            self.loss_curve_.append(loss)

            probs = np.exp(scores - log_z[:, None])
            delta = probs - onehot
            weight.grad[...] = delta.T @ X / n
            bias.grad[...] = delta.mean(axis=0)
            opt.step()
            opt.zero_grad()

            if loss < best - self.tol:
                best, stale = loss, 0
            else:
                stale += 1
                if stale >= self.patience:
                    break

        self.coef_ = weight.value
        self.intercept_ = bias.value
        return self

    def _check_fitted(self):
        if not hasattr(self, "coef_"):
            raise NotFittedError("classifier is not fitted yet")

    def decision_function(self, X):
        self._check_fitted()
        X = np.asarray(X, dtype=np.float64)
        return X @ self.coef_.T + self.intercept_

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]


def _masked_scores(classifier, features, labels, restrict):
    scores = classifier.decision_function(features)
    labels = np.asarray(labels, dtype=np.int64)
    if np.setdiff1d(labels, classifier.classes_).size:
        raise ContractError("labels contain classes the classifier does not know")
    if restrict is not None:
        restrict = np.unique(np.asarray(restrict, dtype=np.int64))
        if np.setdiff1d(restrict, classifier.classes_).size:
            raise ContractError("restrict contains classes the classifier does not know")
        if np.setdiff1d(labels, restrict).size:
            raise ContractError("labels must be a subset of the restricted class set")
        keep = np.isin(classifier.classes_, restrict)
        scores = np.where(keep[None, :], scores, -np.inf)
    return scores, labels, restrict


def _per_class(pred, labels, scope):
    present = np.unique(labels)
    missing = np.setdiff1d(scope, present)
    if missing.size:
        warnings.warn(
            f"classes without test rows excluded from the mean: {missing.tolist()}",
            RuntimeWarning,
            stacklevel=3,
        )
    per_class = {
        int(cls): float(np.mean(pred[labels == cls])) for cls in present
    }
    return per_class, float(np.mean(list(per_class.values())))


def per_class_top1(classifier, features, labels, restrict=None):
    """Within-class accuracies and their unweighted mean over classes.

    ``restrict`` narrows both the candidate set (non-members are masked out
    before the argmax) and the averaging scope; restricted classes without
    any labeled row are excluded from the mean with a warning.
    """
    scores, labels, restrict = _masked_scores(classifier, features, labels, restrict)
    pred = classifier.classes_[scores.argmax(axis=1)]
    scope = restrict if restrict is not None else np.unique(labels)
    return _per_class(pred == labels, labels, scope)


def per_class_topk(classifier, features, labels, k=5, restrict=None):
    """Like per_class_top1 but a hit is the label inside the top k scores."""
    scores, labels, restrict = _masked_scores(classifier, features, labels, restrict)
    k = min(k, scores.shape[1])
    top = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    hits = (classifier.classes_[top] == labels[:, None]).any(axis=1)
    scope = restrict if restrict is not None else np.unique(labels)
    return _per_class(hits, labels, scope)


def harmonic_mean(seen_acc, novel_acc):
    """2us/(u+s); zero when both accuracies are zero."""
    for v in (seen_acc, novel_acc):
        if not (0.0 <= v <= 1.0):
            raise ContractError(f"accuracies must lie in [0, 1], got {v}")
    if seen_acc + novel_acc == 0.0:
        return 0.0
    return 2.0 * seen_acc * novel_acc / (seen_acc + novel_acc)


def synthesize_features(generator, embeddings, class_ids, n_per_class, rng):
    """``n_per_class`` generator samples per class, labels attached.

    Latent codes are fresh standard normals from ``rng``; conditioning uses
    the given embedding table rows.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    class_ids = np.asarray(class_ids, dtype=np.int64)
    if class_ids.size and (
        class_ids.min() < 0 or class_ids.max() >= embeddings.shape[0]
    ):
        raise ContractError("unknown class id in synthesis request")
    if n_per_class < 0:
        raise ContractError("n_per_class must be >= 0")
    d_x = generator.d_x
    if n_per_class == 0 or class_ids.size == 0:
        return np.empty((0, d_x)), np.empty(0, dtype=np.int64)
    cond = np.repeat(embeddings[class_ids], n_per_class, axis=0)
    z = rng.standard_normal((cond.shape[0], generator.d_z))
    features = generator(z, cond).value
    labels = np.repeat(class_ids, n_per_class)
    return features, labels


@dataclass
class EvalReport:
    """Metrics of one protocol run; unused fields stay None."""

    protocol: str
    novel_top1: float | None = None
    seen_top1: float | None = None
    harmonic: float | None = None
    novel_top5: float | None = None
    seen_top5: float | None = None
    harmonic_top5: float | None = None
    per_class: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    tags: dict = field(default_factory=dict)

    def asdict(self):
        return {
            "protocol": self.protocol,
            "novel_top1": self.novel_top1,
            "seen_top1": self.seen_top1,
            "harmonic": self.harmonic,
            "novel_top5": self.novel_top5,
            "seen_top5": self.seen_top5,
            "harmonic_top5": self.harmonic_top5,
            "per_class": self.per_class,
            "options": self.options,
            "tags": self.tags,
        }

    def to_json(self):
        return json.dumps(self.asdict(), indent=1, sort_keys=True)


def _fit(X_parts, y_parts, classes, allow_missing, epochs, lr, patience):
    X = np.concatenate([p for p in X_parts if len(p)], axis=0)
    y = np.concatenate([p for p in y_parts if len(p)], axis=0)
    clf = SoftmaxClassifier(epochs=epochs, lr=lr, patience=patience)
    return clf.fit(X, y, classes=classes, allow_missing=allow_missing)


def evaluate(models, dataset, protocol, *, n_synthetic=300, synth_seen=False,
             shots=None, top_k=None, seed=0, classifier_epochs=500,
             classifier_lr=1e-3, classifier_patience=25, tags=None):
    """Run one protocol against a trained generator; returns an EvalReport."""
    if protocol not in PROTOCOLS:
        raise ContractError(f"unknown protocol {protocol!r}, expected {PROTOCOLS}")
    few_shot = protocol in ("fsl", "gfsl")
    if few_shot and shots is None:
        raise ContractError(f"protocol {protocol!r} needs shots")
    if not few_shot and shots is not None:
        raise ContractError(f"protocol {protocol!r} does not take shots")
    if dataset.rows("test_novel").size == 0:
        raise ContractError(f"protocol {protocol!r} needs a test_novel split")
    if protocol in ("gzsl", "gfsl") and dataset.rows("test_seen").size == 0:
        raise ContractError(f"protocol {protocol!r} needs a test_seen split")

    rng = stream(seed, "eval")
    if few_shot:
        dataset = nshot_subsample(dataset, shots, seed=int(rng.integers(2**32)))

    novel = dataset.novel_classes
    generator = models.generator
    X_syn, y_syn = synthesize_features(
        generator, dataset.class_embeddings, novel, n_synthetic, rng
    )

    train_feats = dataset.features_for("train_seen")
    train_labels = dataset.labels_for("train_seen")
    novel_rows = np.isin(train_labels, novel)  # promoted few-shot rows, if any

    options = {
        "n_synthetic": n_synthetic, "synth_seen": synth_seen, "shots": shots,
        "top_k": top_k, "seed": seed,
    }
    report = EvalReport(protocol=protocol, options=options, tags=dict(tags or {}))
    fit_kw = dict(epochs=classifier_epochs, lr=classifier_lr,
                  patience=classifier_patience)

    test_novel_feats = dataset.features_for("test_novel")
    test_novel_labels = dataset.labels_for("test_novel")

    if protocol in ("zsl", "fsl"):
        clf = _fit(
            [X_syn, train_feats[novel_rows]],
            [y_syn, train_labels[novel_rows]],
            classes=novel, allow_missing=False, **fit_kw,
        )
        per_class, top1 = per_class_top1(
            clf, test_novel_feats, test_novel_labels, restrict=novel
        )
        report.novel_top1 = top1
        report.per_class = {"novel": per_class}
        if top_k:
            _, report.novel_top5 = per_class_topk(
                clf, test_novel_feats, test_novel_labels, k=top_k, restrict=novel
            )
        return report

    # generalized protocols: one classifier over every class
    all_classes = np.union1d(dataset.seen_classes, novel)
    X_seen_syn, y_seen_syn = (np.empty((0, dataset.d_x)), np.empty(0, np.int64))
    if synth_seen:
        X_seen_syn, y_seen_syn = synthesize_features(
            generator, dataset.class_embeddings, dataset.seen_classes,
            n_synthetic, rng,
        )
    clf = _fit(
        [train_feats, X_syn, X_seen_syn],
        [train_labels, y_syn, y_seen_syn],
        classes=all_classes, allow_missing=(n_synthetic == 0), **fit_kw,
    )
    test_seen_feats = dataset.features_for("test_seen")
    test_seen_labels = dataset.labels_for("test_seen")
    per_novel, novel_acc = per_class_top1(clf, test_novel_feats, test_novel_labels)
    per_seen, seen_acc = per_class_top1(clf, test_seen_feats, test_seen_labels)
    report.novel_top1 = novel_acc
    report.seen_top1 = seen_acc
    report.harmonic = harmonic_mean(seen_acc, novel_acc)
    report.per_class = {"novel": per_novel, "seen": per_seen}
    if top_k:
        _, n5 = per_class_topk(clf, test_novel_feats, test_novel_labels, k=top_k)
        _, s5 = per_class_topk(clf, test_seen_feats, test_seen_labels, k=top_k)
        report.novel_top5 = n5
        report.seen_top5 = s5
        report.harmonic_top5 = harmonic_mean(s5, n5)
    return report
