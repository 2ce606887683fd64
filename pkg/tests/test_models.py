import numpy as np
import pytest

from anyshot import autodiff as ad
from anyshot import models as m
from anyshot.errors import ContractError, DataFormatError


def small_models(seed=0, d_x=5, d_c=3, d_z=None, hidden=7):
    return m.Models(d_x, d_c, d_z, hidden=hidden, rng=np.random.default_rng(seed))


class TestArchitecture:
    def test_encoder_splits_mean_and_logvar_halves(self):
        mm = small_models()
        x = np.random.default_rng(1).uniform(size=(4, 5))
        c = np.random.default_rng(2).uniform(size=(4, 3))
        mu, logvar = mm.encoder(x, c)
        assert mu.shape == (4, 3) and logvar.shape == (4, 3)
        # the two heads are the two halves of one affine output
        inp = np.concatenate([x, c], axis=1)
        h = inp @ mm.encoder.w1.value + mm.encoder.b1.value
        h = np.where(h > 0, h, 0.2 * h)
        out = h @ mm.encoder.w2.value + mm.encoder.b2.value
        np.testing.assert_allclose(mu.value, out[:, :3])
        np.testing.assert_allclose(logvar.value, out[:, 3:])

    def test_generator_output_in_unit_interval(self):
        mm = small_models()
        z = np.random.default_rng(3).normal(size=(6, 3))
        c = np.random.default_rng(4).uniform(size=(6, 3))
        out = mm.generator(z, c)
        assert out.shape == (6, 5)
        assert np.all(out.value > 0.0) and np.all(out.value < 1.0)

    def test_critic_scores_one_per_row(self):
        mm = small_models()
        x = np.random.default_rng(5).uniform(size=(4, 5))
        c = np.random.default_rng(6).uniform(size=(4, 3))
        assert mm.class_critic.score(x, c).shape == (4, 1)
        assert mm.pool_critic.score(x).shape == (4, 1)

    def test_latent_size_defaults_to_embedding_size(self):
        mm = m.Models(8, 4, rng=np.random.default_rng(0))
        assert mm.d_z == 4

    def test_parameter_counts_closed_form(self):
        mm = small_models(d_x=5, d_c=3, d_z=2, hidden=7)
        count = lambda net: sum(p.value.size for p in net.params())
        assert count(mm.encoder) == m.encoder_param_count(5, 3, 2, 7)
        assert count(mm.generator) == m.generator_param_count(5, 3, 2, 7)
        assert count(mm.class_critic) == m.critic_param_count(5, 3, 7)
        assert count(mm.pool_critic) == m.critic_param_count(5, None, 7)
        # spelled out once: (5+3)*7 + 7 + 7*4 + 4 for the encoder
        assert count(mm.encoder) == (5 + 3) * 7 + 7 + 7 * 4 + 4

    def test_decoder_is_the_generator(self):
        mm = small_models()
        assert mm.decoder is mm.generator
        assert [id(p) for p in mm.decoder.params()] == [
            id(p) for p in mm.generator.params()
        ]


class TestInitialization:
    def test_same_seed_same_weights(self):
        a, b = small_models(seed=11), small_models(seed=11)
        for pa, pb in zip(a.params(), b.params()):
            assert pa.value.tobytes() == pb.value.tobytes()

    def test_different_seed_different_weights(self):
        a, b = small_models(seed=11), small_models(seed=12)
        assert any(
            not np.array_equal(pa.value, pb.value)
            for pa, pb in zip(a.params(), b.params())
        )

    def test_uniform_bound_and_zero_biases(self):
        mm = small_models(d_x=5, d_c=3, d_z=3, hidden=7)
        bound = np.sqrt(6.0 / (8 + 7))
        assert np.all(np.abs(mm.encoder.w1.value) <= bound)
        np.testing.assert_array_equal(mm.encoder.b1.value, np.zeros(7))

    def test_rejects_nonpositive_dims(self):
        with pytest.raises(ContractError):
            m.Models(0, 3)


class TestContracts:
    def test_conditional_critic_requires_conditioning(self):
        mm = small_models()
        with pytest.raises(ContractError, match="without conditioning"):
            mm.class_critic.score(np.ones((2, 5)))

    def test_unconditional_critic_rejects_conditioning(self):
        mm = small_models()
        with pytest.raises(ContractError, match="unconditional"):
            mm.pool_critic.score(np.ones((2, 5)), np.ones((2, 3)))

    def test_embedding_width_mismatch(self):
        mm = small_models()
        with pytest.raises(ContractError, match="conditioning"):
            mm.encoder(np.ones((2, 5)), np.ones((2, 4)))

    def test_feature_width_mismatch(self):
        mm = small_models()
        with pytest.raises(ContractError, match="features"):
            mm.class_critic.score(np.ones((2, 4)), np.ones((2, 3)))


class TestReparameterize:
    def test_standard_gaussian_passes_noise_through(self):
        mu = ad.constant(np.zeros((1, 2)))
        logvar = ad.constant(np.zeros((1, 2)))
        z = m.reparameterize(mu, logvar, np.array([[1.0, -1.0]]))
        np.testing.assert_allclose(z.value, [[1.0, -1.0]])

    def test_matches_closed_form(self):
        rng = np.random.default_rng(9)
        mu_v, logvar_v = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        eps = rng.normal(size=(3, 4))
        z = m.reparameterize(ad.constant(mu_v), ad.constant(logvar_v), eps)
        np.testing.assert_allclose(z.value, mu_v + np.exp(0.5 * logvar_v) * eps)

    def test_noise_shape_mismatch(self):
        mu = ad.constant(np.zeros((1, 2)))
        with pytest.raises(ContractError, match="noise shape"):
            m.reparameterize(mu, mu, np.zeros((2, 2)))

    def test_gradient_flows_to_encoder(self):
        mm = small_models()
        x = np.random.default_rng(1).uniform(size=(2, 5))
        c = np.random.default_rng(2).uniform(size=(2, 3))
        mu, logvar = mm.encoder(x, c)
        z = m.reparameterize(mu, logvar, np.random.default_rng(3).normal(size=(2, 3)))
        ad.backward(ad.mean(ad.square(z)))
        assert np.any(mm.encoder.w1.grad != 0.0)


class TestCheckpoint:
    def test_round_trip_is_bit_identical(self, tmp_path):
        mm = small_models(seed=42)
        path = tmp_path / "model.ckpt"
        m.save_checkpoint(path, mm, meta={"note": "fixture"})
        loaded, meta = m.load_checkpoint(path)
        assert meta == {"note": "fixture"}
        for p, q in zip(mm.params(), loaded.params()):
            assert p.name == q.name
            assert p.value.tobytes() == q.value.tobytes()
        again = tmp_path / "again.ckpt"
        m.save_checkpoint(again, loaded, meta={"note": "fixture"})
        assert path.read_bytes() == again.read_bytes()

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(DataFormatError, match="magic"):
            m.load_checkpoint(path)

    def test_rejects_truncated_blocks(self, tmp_path):
        mm = small_models()
        path = tmp_path / "model.ckpt"
        m.save_checkpoint(path, mm)
        clipped = tmp_path / "clipped.ckpt"
        clipped.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(DataFormatError, match="truncated"):
            m.load_checkpoint(clipped)
