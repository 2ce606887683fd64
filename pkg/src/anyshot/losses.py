"""Training objectives.

Three pieces combine into the full objective:

* a Wasserstein critic loss with a gradient penalty that pushes the critic's
  input-gradient norm toward 1 on random interpolates between real and
  generated batches,
* a conditional VAE loss (KL against a standard normal plus a Bernoulli
  cross-entropy reconstruction, both conditioned on the class embedding),
* the combined generator loss: VAE terms plus an adversarial term weighted
  by ``LossWeights.adversarial``.

A second, unconditional critic scores real unlabeled features against
features generated for randomly drawn novel classes; its loss has the same
Wasserstein-plus-penalty form minus the conditioning.  Those two entry
points are transductive-only and refuse to run otherwise.

Critic losses treat the generated batch as fixed data (detached), so a
critic update can never move generator parameters through the graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError
from .models import reparameterize

# probabilities are clamped away from {0, 1} before the logs in the
# cross-entropy; keeps the loss finite for saturated sigmoid outputs
BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Mixing weights: gradient penalty, adversarial term, KL term."""

    penalty: float = 10.0
    adversarial: float = 1000.0
    kl: float = 1.0

    def __post_init__(self):
        for field in ("penalty", "adversarial", "kl"):
            if getattr(self, field) < 0:
                raise ContractError(f"LossWeights.{field} must be non-negative")


def _as_values(x, what):
    values = x.value if isinstance(x, ad.Node) else np.asarray(x, dtype=np.float64)
    if values.ndim != 2:
        raise ContractError(f"{what}: expected a matrix, got shape {values.shape}")
    return values


def _interpolation_weights(alpha, rows, rng):
    if alpha is None:
        if rng is None:
            raise ContractError("gradient_penalty needs either alpha or rng")
        alpha = rng.uniform(size=(rows, 1))
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (rows, 1):
        raise ContractError(f"alpha must have shape ({rows}, 1), got {alpha.shape}")
    if alpha.min() < 0.0 or alpha.max() > 1.0:
        raise ContractError("alpha values must lie in [0, 1]")
    return alpha


def gradient_penalty(critic, x_real, x_fake, cond=None, alpha=None, rng=None):
    """mean((||d score/d interpolate||_2 - 1)^2) over per-row interpolates.

    Interpolates are alpha * real + (1 - alpha) * fake with one uniform
    alpha per row.  The result is a graph node whose gradient with respect
    to critic parameters includes the second-order term.
    """
    xr = _as_values(x_real, "gradient_penalty real batch")
    xf = _as_values(x_fake, "gradient_penalty fake batch")
    if xr.shape != xf.shape:
        raise ContractError(
            f"real/fake batches differ in shape: {xr.shape} vs {xf.shape}"
        )
    alpha = _interpolation_weights(alpha, xr.shape[0], rng)
    mixed = alpha * xr + (1.0 - alpha) * xf
    cond_node = None if cond is None else ad.as_node(cond)
    norm = ad.input_gradient_norm(critic.score, mixed, cond=cond_node)
    return ad.mean(ad.square(ad.sub(norm, ad.constant(np.ones(norm.shape)))))


def wgan_critic_loss(critic, x_real, x_fake, cond=None, weights=LossWeights(),
                     alpha=None, rng=None):
    """-E[score(real)] + E[score(fake)] + penalty_weight * gradient_penalty."""
    xr = _as_values(x_real, "critic loss real batch")
    xf = _as_values(x_fake, "critic loss fake batch")
    cond_node = None if cond is None else ad.as_node(cond)
    real_mean = ad.mean(critic.score(ad.constant(xr), cond_node))
    fake_mean = ad.mean(critic.score(ad.constant(xf), cond_node))
    penalty = gradient_penalty(critic, xr, xf, cond_node, alpha=alpha, rng=rng)
    return ad.add(
        ad.sub(fake_mean, real_mean), ad.scalar_mul(penalty, weights.penalty)
    )


def adversarial_generator_loss(critic, x_fake, cond=None):
    """-E[score(fake)]; ``x_fake`` stays attached so gradients reach the generator."""
    if not isinstance(x_fake, ad.Node):
        raise ContractError("generator loss needs the generated batch as a graph node")
    return ad.neg(ad.mean(critic.score(x_fake, cond)))


def kl_divergence(mu, logvar):
    """Batch mean of KL(N(mu, diag exp(logvar)) || N(0, I)), closed form."""
    one = ad.constant(np.ones(mu.shape))
    inner = ad.sub(ad.sub(ad.add(ad.square(mu), ad.exp(logvar)), logvar), one)
    return ad.scalar_mul(ad.mean(ad.row_sum(inner)), 0.5)


def bce(target, probs):
    """Bernoulli cross-entropy, mean over dimensions and batch."""
    t = target.value if isinstance(target, ad.Node) else np.asarray(target, float)
    if t.min() < 0.0 or t.max() > 1.0:
        raise ContractError("cross-entropy targets must lie in [0, 1]")
    if t.shape != probs.value.shape:
        raise ContractError(
            f"target shape {t.shape} != prediction shape {probs.value.shape}"
        )
    p = ad.clip(probs, BCE_CLAMP, 1.0 - BCE_CLAMP)
    one = ad.constant(np.ones(t.shape))
    t_node = ad.constant(t)
    term = ad.add(
        ad.mul(t_node, ad.log(p)),
        ad.mul(ad.sub(one, t_node), ad.log(ad.sub(one, p))),
    )
    return ad.neg(ad.mean(term))


def vae_terms(encoder, generator, x, cond, eps):
    """(kl, reconstruction) nodes for one batch; ``eps`` is the latent noise."""
    xv = _as_values(x, "vae batch")
    if xv.min() < 0.0 or xv.max() > 1.0:
        raise ContractError("vae features must be rescaled into [0, 1]")
    x_node = ad.constant(xv)
    cond_node = ad.as_node(cond)
    mu, logvar = encoder(x_node, cond_node)
    z = reparameterize(mu, logvar, eps)
    recon = generator(z, cond_node)
    return kl_divergence(mu, logvar), bce(x_node, recon)


def vae_loss(encoder, generator, x, cond, eps, weights=LossWeights()):
    """kl_weight * KL + reconstruction cross-entropy."""
    kl, recon = vae_terms(encoder, generator, x, cond, eps)
    return ad.add(ad.scalar_mul(kl, weights.kl), recon)


def vaegan_generator_loss(encoder, generator, critic, x, cond, eps, z_prior,
                          weights=LossWeights()):
    """VAE loss plus adversarial_weight * (-E[score of prior samples])."""
    cond_node = ad.as_node(cond)
    base = vae_loss(encoder, generator, x, cond_node, eps, weights)
    fake = generator(ad.constant(z_prior), cond_node)
    adv = adversarial_generator_loss(critic, fake, cond_node)
    return ad.add(base, ad.scalar_mul(adv, weights.adversarial))


def _require_transductive(mode, what):
    if mode != "transductive":
        raise ContractError(f"{what} is transductive-only, got mode {mode!r}")


def pool_critic_loss(critic, x_unlabeled, x_fake, weights=LossWeights(),
                     alpha=None, rng=None, mode="transductive"):
    """Wasserstein loss of the unconditional critic on the unlabeled pool."""
    _require_transductive(mode, "the unlabeled-pool critic loss")
    if critic.conditional:
        raise ContractError("pool critic loss needs an unconditional critic")
    return wgan_critic_loss(
        critic, x_unlabeled, x_fake, None, weights, alpha=alpha, rng=rng
    )


def pool_generator_loss(critic, x_fake, mode="transductive"):
    """-E[score(fake)] against the unconditional critic."""
    _require_transductive(mode, "the unlabeled-pool generator loss")
    return adversarial_generator_loss(critic, x_fake, None)
