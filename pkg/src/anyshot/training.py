"""Adversarial training loop over the network bundle.

One generator step is preceded by ``critic_iters`` updates of each active
critic: the class-conditional critic for the adversarial variants, plus the
unconditional pool critic in transductive mode.  Critic updates draw fresh
labeled (or unlabeled) minibatches; generator updates sweep the shuffled
labeled set, and one such sweep is an epoch.

Early stopping watches a proxy metric after every epoch: synthesize
features for the seen classes, fit a small softmax on nothing but the
synthetic rows, and score real held-out seen rows.  The parameters from the
best-scoring epoch are restored when the loop ends.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import losses
from .errors import ConfigError
from .evaluation import SoftmaxClassifier, per_class_top1, synthesize_features
from .models import Models
from .optim import Adam
from .seeding import stream

VARIANTS = ("gan", "vae", "vaegan")
MODES = ("inductive", "transductive")


@dataclass
class TrainingConfig:
    """Everything a run needs; unknown keys are rejected by from_dict."""

    variant: str = "vaegan"
    mode: str = "inductive"
    learning_rate: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    critic_iters: int = 5
    batch_size: int = 64
    max_epochs: int = 30
    penalty: float = 10.0
    adversarial: float = 1000.0
    kl: float = 1.0
    hidden_dim: int = 4096
    latent_dim: int | None = None
    leaky_slope: float = 0.2
    seed: int = 0
    patience: int = 10
    val_fraction: float = 0.1
    val_synth_per_class: int = 50
    val_classifier_epochs: int = 200

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {b}")
        if self.critic_iters < 1:
            raise ConfigError("critic_iters must be >= 1")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2, interpolation needs both ends")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        for name in ("penalty", "adversarial", "kl"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0")
        if self.hidden_dim < 1:
            raise ConfigError("hidden_dim must be >= 1")
        if self.latent_dim is not None and self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1 when given")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie strictly inside (0, 1)")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.val_synth_per_class < 1 or self.val_classifier_epochs < 1:
            raise ConfigError("validation budget fields must be >= 1")

    @classmethod
    def from_dict(cls, raw):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**raw)

    def asdict(self):
        return dataclasses.asdict(self)

    @property
    def weights(self):
        return losses.LossWeights(
            penalty=self.penalty, adversarial=self.adversarial, kl=self.kl
        )


@dataclass
class TrainResult:
    models: Models
    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    best_epoch: int = -1
    best_val: float = float("-inf")


def write_loss_csv(path, steps):
    """One row per generator step; component columns after step and epoch."""
    if not steps:
        raise ConfigError("no loss records to write")
    lead = ["step", "epoch"]
    columns = lead + sorted(k for k in steps[0] if k not in lead)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(steps)


def _validation_score(models, dataset, x_val, y_val, config, rng):
    x_syn, y_syn = synthesize_features(
        models.generator, dataset.class_embeddings, dataset.seen_classes,
        config.val_synth_per_class, rng,
    )
    clf = SoftmaxClassifier(epochs=config.val_classifier_epochs)
    clf.fit(x_syn, y_syn, classes=dataset.seen_classes)
    _, top1 = per_class_top1(clf, x_val, y_val)
    return top1


def train(dataset, config, on_epoch=None):
    """Run the configured variant/mode; returns the best-epoch models."""
    use_class_critic = config.variant in ("gan", "vaegan")
    transductive = config.mode == "transductive"
    if transductive and dataset.rows("unlabeled").size == 0:
        raise ConfigError("transductive mode needs a nonempty unlabeled pool")

    init_rng = stream(config.seed, "init")
    run_rng = stream(config.seed, "training")
    val_rng = stream(config.seed, "eval")

    models = Models(
        dataset.d_x, dataset.d_c,
        d_z=config.latent_dim, hidden=config.hidden_dim,
        slope=config.leaky_slope, rng=init_rng,
    )
    weights = config.weights
    emb = dataset.class_embeddings
    novel = dataset.novel_classes
    batch = config.batch_size

    x_train = dataset.features_for("train_seen")
    y_train = dataset.labels_for("train_seen")
    n_val = max(1, int(round(config.val_fraction * len(x_train))))
    if n_val >= len(x_train):
        raise ConfigError("val_fraction leaves no training rows")
    holdout = run_rng.permutation(len(x_train))
    x_val, y_val = x_train[holdout[:n_val]], y_train[holdout[:n_val]]
    x_lab, y_lab = x_train[holdout[n_val:]], y_train[holdout[n_val:]]
    n_lab = len(x_lab)
    if batch > n_lab:
        raise ConfigError(
            f"batch_size {batch} exceeds the {n_lab} labeled training rows"
        )

    adam_kw = dict(lr=config.learning_rate, beta1=config.beta1, beta2=config.beta2)
    if config.variant == "gan":
        gen_params = models.generator.params()
    else:
        gen_params = models.encoder.params() + models.generator.params()
    gen_opt = Adam(gen_params, **adam_kw)
    critic_opt = Adam(models.class_critic.params(), **adam_kw)
    pool_opt = Adam(models.pool_critic.params(), **adam_kw)

    x_pool = None
    if transductive:
        x_pool = dataset.features_for("unlabeled")
        if batch > len(x_pool):
            raise ConfigError(
                f"batch_size {batch} exceeds the {len(x_pool)} unlabeled rows"
            )

    def zero_all():
        for p in models.params():
            p.zero_grad()

    def fake_batch(cond):
        z = run_rng.standard_normal((len(cond), models.d_z))
        return models.generator(z, cond)

    def critic_phase(record):
        vals = []
        for _ in range(config.critic_iters):
            idx = run_rng.choice(n_lab, size=batch, replace=False)
            cond = emb[y_lab[idx]]
            zero_all()
            loss = losses.wgan_critic_loss(
                models.class_critic, x_lab[idx], fake_batch(cond), cond,
                weights, rng=run_rng,
            )
            ad.backward(loss)
            critic_opt.step()
            vals.append(loss.value)
            counters["critic"] += 1
        record["critic_loss"] = float(np.mean(vals))

    def pool_phase(record):
        vals = []
        for _ in range(config.critic_iters):
            idx = run_rng.choice(len(x_pool), size=batch, replace=False)
            cond = emb[run_rng.choice(novel, size=batch)]
            zero_all()
            loss = losses.pool_critic_loss(
                models.pool_critic, x_pool[idx], fake_batch(cond),
                weights, rng=run_rng, mode=config.mode,
            )
            ad.backward(loss)
            pool_opt.step()
            vals.append(loss.value)
            counters["pool_critic"] += 1
        record["pool_critic_loss"] = float(np.mean(vals))

    def generator_loss(x, cond, record):
        parts = []
        if config.variant in ("vae", "vaegan"):
            eps = run_rng.standard_normal((len(x), models.d_z))
            kl, recon = losses.vae_terms(
                models.encoder, models.generator, x, cond, eps
            )
            parts += [ad.scalar_mul(kl, weights.kl), recon]
            record["kl"] = float(kl.value)
            record["reconstruction"] = float(recon.value)
        if use_class_critic:
            adv = losses.adversarial_generator_loss(
                models.class_critic, fake_batch(cond), cond
            )
            gain = weights.adversarial if config.variant == "vaegan" else 1.0
            parts.append(ad.scalar_mul(adv, gain))
            record["adversarial"] = float(adv.value)
        if transductive:
            cond_n = emb[run_rng.choice(novel, size=len(x))]
            pool = losses.pool_generator_loss(
                models.pool_critic, fake_batch(cond_n), mode=config.mode
            )
            parts.append(pool)
            record["pool_adversarial"] = float(pool.value)
        total = parts[0]
        for part in parts[1:]:
            total = ad.add(total, part)
        return total

    result = TrainResult(models=models)
    counters = {"critic": 0, "pool_critic": 0, "generator": 0}
    best_params = None
    stale = 0
    step = 0
    guarded = ("test_novel_labels",) + (
        () if transductive else ("unlabeled_features",)
    )
    with dataset.guard.forbid(*guarded):
        for epoch in range(config.max_epochs):
            order = run_rng.permutation(n_lab)
            for b0 in range(n_lab // batch):
                record = {"step": step, "epoch": epoch}
                if use_class_critic:
                    critic_phase(record)
                if transductive:
                    pool_phase(record)
                idx = order[b0 * batch:(b0 + 1) * batch]
                zero_all()
                total = generator_loss(x_lab[idx], emb[y_lab[idx]], record)
                ad.backward(total)
                gen_opt.step()
                counters["generator"] += 1
                record["generator_loss"] = float(total.value)
                result.steps.append(record)
                step += 1

            score = _validation_score(models, dataset, x_val, y_val, config, val_rng)
            result.epochs.append({"epoch": epoch, "val_top1": float(score)})
            if on_epoch is not None:
                on_epoch(result.epochs[-1])
            if score > result.best_val:
                result.best_val = float(score)
                result.best_epoch = epoch
                best_params = {p.name: p.value.copy() for p in models.params()}
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break

    if use_class_critic:
        assert counters["critic"] == counters["generator"] * config.critic_iters
    if transductive:
        assert counters["pool_critic"] == counters["generator"] * config.critic_iters
    result.counters = counters
    for p in models.params():
        p.value[...] = best_params[p.name]
    return result
