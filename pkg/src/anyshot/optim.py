"""Adam with bias correction over Parameter objects.

The update reads each parameter's accumulated ``.grad`` and applies

    m <- beta1 * m + (1 - beta1) * g
    v <- beta2 * v + (1 - beta2) * g^2
    p <- p - lr * m_hat / (sqrt(v_hat) + eps)

with m_hat, v_hat the bias-corrected moments.  beta1 defaults to 0.5, the
usual choice when the gradients come from an adversarial game; the learning
rate is constant.  A non-finite gradient aborts naming the parameter, so a
diverging run fails loudly instead of poisoning the moments.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, NumericError


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.5, beta2=0.999, eps=1e-8):
        params = list(params)
        if not params:
            raise ContractError("Adam needs at least one parameter")
        if lr <= 0:
            raise ContractError("learning rate must be positive")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ContractError("decay rates must lie in [0, 1)")
        self.params = params
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._m = [np.zeros_like(p.value) for p in params]
        self._v = [np.zeros_like(p.value) for p in params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        """One update from the current gradients; advances the timestep."""
        self.t += 1
        correct1 = 1.0 - self.beta1**self.t
        correct2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in parameter '{p.name}'")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.value -= self.lr * (m / correct1) / (np.sqrt(v / correct2) + self.eps)
