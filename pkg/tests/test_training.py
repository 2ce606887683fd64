"""Optimizer, config, and training-loop tests.

The loop tests run tiny configurations (narrow nets, few epochs) so the
whole file stays fast; they assert structure (schedules, isolation,
determinism, guard counters), not model quality.
"""

import csv

import numpy as np
import pytest

from anyshot import autodiff as ad
from anyshot.data import SplitSpec, SyntheticSpec, make_synthetic
from anyshot.errors import ConfigError, ContractError, NumericError
from anyshot.models import Models
from anyshot.optim import Adam
from anyshot.seeding import stream
from anyshot.training import TrainingConfig, train, write_loss_csv

BETAS = dict(beta1=0.9, beta2=0.999)


def tiny_dataset(seed=0, **overrides):
    spec = SyntheticSpec(n_seen=4, n_novel=2, d_x=8, d_c=4,
                         samples_per_class=30, noise=0.1, seed=seed, **overrides)
    return make_synthetic(spec)


def tiny_config(**overrides):
    base = dict(variant="vaegan", mode="inductive", batch_size=16,
                max_epochs=2, critic_iters=2, hidden_dim=16,
                val_synth_per_class=20, val_classifier_epochs=50, seed=0)
    base.update(overrides)
    return TrainingConfig(**base)


def reference_adam(values, grads, lr, beta1, beta2, eps=1e-8):
    # textbook update written independently of the optimizer under test
    values = [np.array(v, dtype=float) for v in values]
    ms = [np.zeros_like(v) for v in values]
    vs = [np.zeros_like(v) for v in values]
    for t, gs in enumerate(grads, start=1):
        for p, m, v, g in zip(values, ms, vs, gs):
            m[...] = beta1 * m + (1 - beta1) * g
            v[...] = beta2 * v + (1 - beta2) * g * g
            mhat = m / (1 - beta1**t)
            vhat = v / (1 - beta2**t)
            p -= lr * mhat / (np.sqrt(vhat) + eps)
    return values


# -- optimizer ---------------------------------------------------------------

def test_zero_gradient_leaves_parameters_and_advances_time():
    p = ad.Parameter("p", np.array([1.0, -2.0]))
    opt = Adam([p], lr=0.1)
    before = p.value.copy()
    opt.step()
    assert opt.t == 1
    np.testing.assert_array_equal(p.value, before)


def test_first_step_with_unit_gradient_is_minus_lr():
    p = ad.Parameter("p", np.array([0.0]))
    opt = Adam([p], lr=0.05, **BETAS)
    p.grad[...] = 1.0
    opt.step()
    # bias correction makes m_hat = v_hat = 1 at t=1
    np.testing.assert_allclose(p.value, [-0.05 * 1.0 / (1.0 + 1e-8)], rtol=1e-14)


def test_hundred_steps_match_reference_implementation():
    rng = np.random.default_rng(0)
    shapes = [(3, 2), (4,)]
    start = [rng.standard_normal(s) for s in shapes]
    grads = [[rng.standard_normal(s) for s in shapes] for _ in range(100)]

    params = [ad.Parameter(f"p{i}", v.copy()) for i, v in enumerate(start)]
    opt = Adam(params, lr=0.01, beta1=0.5, beta2=0.999)
    for gs in grads:
        for p, g in zip(params, gs):
            p.grad[...] = g
        opt.step()
        opt.zero_grad()

    want = reference_adam(start, grads, lr=0.01, beta1=0.5, beta2=0.999)
    for p, w in zip(params, want):
        np.testing.assert_allclose(p.value, w, rtol=0, atol=1e-12)


def test_non_finite_gradient_aborts_naming_parameter():
    p = ad.Parameter("enc.w1", np.zeros(2))
    opt = Adam([p])
    p.grad[...] = np.nan
    with pytest.raises(NumericError, match="enc.w1"):
        opt.step()


def test_optimizer_argument_validation():
    p = ad.Parameter("p", np.zeros(1))
    with pytest.raises(ContractError):
        Adam([])
    with pytest.raises(ContractError):
        Adam([p], lr=0.0)
    with pytest.raises(ContractError):
        Adam([p], beta1=1.0)


# -- config ------------------------------------------------------------------

def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="critick_iters"):
        TrainingConfig.from_dict({"critick_iters": 5})


def test_config_round_trips_through_dict():
    cfg = tiny_config(variant="gan", critic_iters=3)
    assert TrainingConfig.from_dict(cfg.asdict()) == cfg


@pytest.mark.parametrize("bad", [
    dict(variant="wgan"),
    dict(mode="semi"),
    dict(learning_rate=0.0),
    dict(beta1=1.0),
    dict(critic_iters=0),
    dict(batch_size=1),
    dict(max_epochs=0),
    dict(penalty=-1.0),
    dict(val_fraction=0.0),
    dict(val_fraction=1.0),
    dict(patience=0),
    dict(latent_dim=0),
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        tiny_config(**bad)


def test_config_weights_property():
    w = tiny_config(penalty=3.0, adversarial=7.0, kl=0.5).weights
    assert (w.penalty, w.adversarial, w.kl) == (3.0, 7.0, 0.5)


# -- schedule and counters ---------------------------------------------------

def test_critic_steps_per_generator_step():
    ds = tiny_dataset()
    result = train(ds, tiny_config(critic_iters=3))
    g = result.counters["generator"]
    assert g > 0
    assert result.counters["critic"] == 3 * g
    assert result.counters["pool_critic"] == 0


def test_vae_inductive_never_touches_critics():
    ds = tiny_dataset()
    result = train(ds, tiny_config(variant="vae"))
    assert result.counters["critic"] == 0
    assert result.counters["pool_critic"] == 0
    banned = {"critic_loss", "adversarial", "pool_critic_loss", "pool_adversarial"}
    for record in result.steps:
        assert not banned & set(record)
        assert {"kl", "reconstruction", "generator_loss"} <= set(record)

    # critics keep their initialization bit for bit
    init = Models(ds.d_x, ds.d_c, hidden=16, rng=stream(0, "init"))
    for net in ("class_critic", "pool_critic"):
        for p0, p1 in zip(getattr(init, net).params(),
                          getattr(result.models, net).params()):
            assert p0.value.tobytes() == p1.value.tobytes()


def test_gan_variant_never_touches_encoder():
    ds = tiny_dataset()
    result = train(ds, tiny_config(variant="gan"))
    init = Models(ds.d_x, ds.d_c, hidden=16, rng=stream(0, "init"))
    for p0, p1 in zip(init.encoder.params(), result.models.encoder.params()):
        assert p0.value.tobytes() == p1.value.tobytes()
    for p0, p1 in zip(init.generator.params(), result.models.generator.params()):
        assert p0.value.tobytes() != p1.value.tobytes()
    for record in result.steps:
        assert "kl" not in record and "reconstruction" not in record


def test_transductive_updates_pool_critic():
    ds = tiny_dataset()
    result = train(ds, tiny_config(mode="transductive", max_epochs=1))
    g = result.counters["generator"]
    assert result.counters["pool_critic"] == 2 * g
    for record in result.steps:
        assert "pool_critic_loss" in record and "pool_adversarial" in record

    init = Models(ds.d_x, ds.d_c, hidden=16, rng=stream(0, "init"))
    for p0, p1 in zip(init.params(), result.models.params()):
        changed = p0.value.tobytes() != p1.value.tobytes()
        if p0.name in ("critic_class.b2", "critic_pool.b2"):
            # a critic's output offset cancels in mean(fake) - mean(real)
            # and never affects the input gradient: exactly zero gradient
            assert not changed, p0.name
        else:
            assert changed, p0.name


def test_recorded_generator_loss_is_the_sum_of_its_parts():
    ds = tiny_dataset()
    cfg = tiny_config(mode="transductive", adversarial=40.0, kl=0.7, max_epochs=1)
    result = train(ds, cfg)
    for r in result.steps:
        want = (0.7 * r["kl"] + r["reconstruction"]
                + 40.0 * r["adversarial"] + r["pool_adversarial"])
        np.testing.assert_allclose(r["generator_loss"], want, rtol=1e-12)


def test_all_recorded_losses_are_finite():
    ds = tiny_dataset()
    for variant in ("gan", "vae", "vaegan"):
        result = train(ds, tiny_config(variant=variant, max_epochs=1))
        for record in result.steps:
            assert all(np.isfinite(v) for v in record.values()), record


# -- determinism and early stopping ------------------------------------------

def test_same_seed_reproduces_curves_and_parameters():
    ds = tiny_dataset()
    a = train(tiny_dataset(), tiny_config(mode="transductive"))
    b = train(tiny_dataset(), tiny_config(mode="transductive"))
    assert a.steps == b.steps
    assert a.epochs == b.epochs
    for p, q in zip(a.models.params(), b.models.params()):
        assert p.value.tobytes() == q.value.tobytes()
    c = train(ds, tiny_config(mode="transductive", seed=1))
    assert c.steps != a.steps


def test_best_epoch_parameters_are_restored():
    ds = tiny_dataset()
    cfg = tiny_config(max_epochs=5)
    result = train(ds, cfg)
    scores = [e["val_top1"] for e in result.epochs]
    assert result.best_val == max(scores)
    assert result.best_epoch == int(np.argmax(scores))

    # a run cut exactly at the best epoch ends on the same parameters
    rerun = train(tiny_dataset(), tiny_config(max_epochs=result.best_epoch + 1))
    for p, q in zip(result.models.params(), rerun.models.params()):
        assert p.value.tobytes() == q.value.tobytes()


def test_patience_stops_early():
    ds = tiny_dataset()
    result = train(ds, tiny_config(max_epochs=30, patience=2,
                                   val_synth_per_class=5,
                                   val_classifier_epochs=5))
    ran = len(result.epochs)
    assert ran < 30
    # the run ends exactly `patience` epochs after the best one
    assert ran - 1 == result.best_epoch + 2


def test_on_epoch_callback_sees_every_epoch():
    seen = []
    train(tiny_dataset(), tiny_config(), on_epoch=seen.append)
    assert [e["epoch"] for e in seen] == [0, 1]
    assert all("val_top1" in e for e in seen)


# -- guards and config errors ------------------------------------------------

def test_inductive_run_never_reads_the_unlabeled_pool():
    ds = tiny_dataset()
    train(ds, tiny_config())
    assert ds.guard.counters["unlabeled_features"] == 0
    assert ds.guard.counters["test_novel_labels"] == 0


def test_transductive_run_reads_the_pool_but_not_novel_labels():
    ds = tiny_dataset()
    train(ds, tiny_config(mode="transductive", max_epochs=1))
    assert ds.guard.counters["unlabeled_features"] == 1
    assert ds.guard.counters["test_novel_labels"] == 0


def test_transductive_mode_requires_unlabeled_rows():
    ds = tiny_dataset()
    old = ds.splits
    drained = SplitSpec(
        train_seen=old.train_seen,
        test_seen=old.test_seen,
        test_novel=np.concatenate([old.test_novel, old.unlabeled]),
        unlabeled=np.empty(0, dtype=np.int64),
    )
    with pytest.raises(ConfigError, match="unlabeled pool"):
        train(ds.with_splits(drained), tiny_config(mode="transductive"))


def test_batch_size_beyond_labeled_rows_rejected():
    ds = tiny_dataset()
    with pytest.raises(ConfigError, match="exceeds"):
        train(ds, tiny_config(batch_size=2000))


# -- loss-curve CSV ----------------------------------------------------------

def test_loss_csv_round_trip(tmp_path):
    result = train(tiny_dataset(), tiny_config(max_epochs=1))
    path = tmp_path / "curve.csv"
    write_loss_csv(path, result.steps)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(result.steps)
    assert rows[0].keys() == result.steps[0].keys()
    assert [int(r["step"]) for r in rows] == [s["step"] for s in result.steps]
    np.testing.assert_allclose(
        [float(r["generator_loss"]) for r in rows],
        [s["generator_loss"] for s in result.steps],
    )


def test_loss_csv_requires_records(tmp_path):
    with pytest.raises(ConfigError):
        write_loss_csv(tmp_path / "x.csv", [])
