"""Network definitions, weight initialization, and checkpoint serialization.

All networks are two-layer perceptrons over float64 feature vectors:

* encoder -- maps a feature/class-embedding pair to the mean and log-variance
  of a diagonal Gaussian over latent codes (no output activation),
* generator -- maps a latent/class-embedding pair to a synthetic feature
  vector squashed into (0, 1) by a sigmoid; it doubles as the VAE decoder,
  the sharing is by construction (one object, one set of parameters),
* critics -- map a feature vector (optionally concatenated with a class
  embedding) to an unbounded scalar score per row.

Weights start uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out));
biases start at zero.  Construction order and a caller-supplied generator
make initialization reproducible bit for bit.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import autodiff as ad
from .errors import ContractError, DataFormatError

DEFAULT_HIDDEN = 4096
DEFAULT_SLOPE = 0.2

CHECKPOINT_MAGIC = b"ASGCKP01"


def _init_weight(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class _TwoLayerNet:
    """Shared plumbing: parameters, the hidden layer, parameter listing."""

    def __init__(self, prefix, d_in, hidden, d_out, slope, rng):
        if rng is None:
            rng = np.random.default_rng()
        self.slope = float(slope)
        self.w1 = ad.Parameter(f"{prefix}.w1", _init_weight(rng, d_in, hidden))
        self.b1 = ad.Parameter(f"{prefix}.b1", np.zeros(hidden))
        self.w2 = ad.Parameter(f"{prefix}.w2", _init_weight(rng, hidden, d_out))
        self.b2 = ad.Parameter(f"{prefix}.b2", np.zeros(d_out))

    def _hidden(self, inp):
        return ad.leaky_relu(
            ad.bias_add(ad.matmul(inp, self.w1), self.b1), slope=self.slope
        )

    def _affine_out(self, inp):
        return ad.bias_add(ad.matmul(self._hidden(inp), self.w2), self.b2)

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]


def _check_cols(node, want, what):
    node = ad.as_node(node)
    if node.value.ndim != 2 or node.value.shape[1] != want:
        raise ContractError(
            f"{what}: expected (rows, {want}), got shape {node.value.shape}"
        )
    return node


class EncoderNet(_TwoLayerNet):
    """Posterior network: (features, class embedding) -> (mu, log-variance)."""

    def __init__(self, d_x, d_c, d_z, hidden=DEFAULT_HIDDEN, slope=DEFAULT_SLOPE,
                 rng=None, prefix="enc"):
        super().__init__(prefix, d_x + d_c, hidden, 2 * d_z, slope, rng)
        self.d_x, self.d_c, self.d_z = d_x, d_c, d_z

    def __call__(self, x, c):
        x = _check_cols(x, self.d_x, "encoder features")
        c = _check_cols(c, self.d_c, "encoder conditioning")
        out = self._affine_out(ad.concat_cols(x, c))
        mu = ad.slice_cols(out, 0, self.d_z)
        logvar = ad.slice_cols(out, self.d_z, 2 * self.d_z)
        return mu, logvar


class GeneratorNet(_TwoLayerNet):
    """Conditional generator and VAE decoder: (latent, class embedding) -> features."""

    def __init__(self, d_z, d_c, d_x, hidden=DEFAULT_HIDDEN, slope=DEFAULT_SLOPE,
                 rng=None, prefix="gen"):
        super().__init__(prefix, d_z + d_c, hidden, d_x, slope, rng)
        self.d_x, self.d_c, self.d_z = d_x, d_c, d_z

    def __call__(self, z, c):
        z = _check_cols(z, self.d_z, "generator latent")
        c = _check_cols(c, self.d_c, "generator conditioning")
        return ad.sigmoid(self._affine_out(ad.concat_cols(z, c)))


class CriticNet(_TwoLayerNet):
    """Scalar-score critic, optionally conditioned on a class embedding."""

    def __init__(self, d_x, d_c=None, hidden=DEFAULT_HIDDEN, slope=DEFAULT_SLOPE,
                 rng=None, prefix="critic"):
        self.conditional = d_c is not None
        d_in = d_x + (d_c or 0)
        super().__init__(prefix, d_in, hidden, 1, slope, rng)
        self.d_x, self.d_c = d_x, d_c

    def score(self, x, c=None):
        x = _check_cols(x, self.d_x, "critic features")
        if self.conditional:
            if c is None:
                raise ContractError("conditional critic called without conditioning")
            c = _check_cols(c, self.d_c, "critic conditioning")
            inp = ad.concat_cols(x, c)
        else:
            if c is not None:
                raise ContractError("unconditional critic given a conditioning input")
            inp = x
        return self._affine_out(inp)


def reparameterize(mu, logvar, eps):
    """z = mu + exp(logvar / 2) * eps, differentiable through mu and logvar."""
    eps = ad.as_node(eps)
    if eps.value.shape != mu.value.shape:
        raise ContractError(
            f"reparameterize: noise shape {eps.value.shape} != mean {mu.value.shape}"
        )
    return ad.add(mu, ad.mul(ad.exp(ad.scalar_mul(logvar, 0.5)), eps))


class Models:
    """The four networks plus the dimensions they were built with.

    The decoder is the generator; ``decoder`` exists so call sites can say
    which role they mean while the parameters stay shared.
    """

    def __init__(self, d_x, d_c, d_z=None, hidden=DEFAULT_HIDDEN,
                 slope=DEFAULT_SLOPE, rng=None):
        if d_z is None:
            d_z = d_c  # latent size follows the embedding size by default
        if min(d_x, d_c, d_z, hidden) < 1:
            raise ContractError("all model dimensions must be positive")
        if rng is None:
            rng = np.random.default_rng()
        self.d_x, self.d_c, self.d_z = int(d_x), int(d_c), int(d_z)
        self.hidden, self.slope = int(hidden), float(slope)
        # construction order fixes the RNG consumption order
        self.encoder = EncoderNet(d_x, d_c, d_z, hidden, slope, rng, prefix="enc")
        self.generator = GeneratorNet(d_z, d_c, d_x, hidden, slope, rng, prefix="gen")
        self.class_critic = CriticNet(d_x, d_c, hidden, slope, rng, prefix="critic_class")
        self.pool_critic = CriticNet(d_x, None, hidden, slope, rng, prefix="critic_pool")

    @property
    def decoder(self):
        return self.generator

    def nets(self):
        return [self.encoder, self.generator, self.class_critic, self.pool_critic]

    def params(self):
        return [p for net in self.nets() for p in net.params()]

    def dims(self):
        return {
            "d_x": self.d_x,
            "d_c": self.d_c,
            "d_z": self.d_z,
            "hidden": self.hidden,
            "slope": self.slope,
        }


def encoder_param_count(d_x, d_c, d_z, hidden):
    return (d_x + d_c) * hidden + hidden + hidden * 2 * d_z + 2 * d_z


def generator_param_count(d_x, d_c, d_z, hidden):
    return (d_z + d_c) * hidden + hidden + hidden * d_x + d_x


def critic_param_count(d_x, d_c, hidden):
    return (d_x + (d_c or 0)) * hidden + hidden + hidden + 1


# ---------------------------------------------------------------------------
# checkpoint format: magic, u32 header length, JSON header, float64 LE blocks
# in the order the header declares.  No timestamps inside; identical models
# serialize to identical bytes.


def save_checkpoint(path, models, meta=None):
    params = models.params()
    header = {
        "format": "anyshot-checkpoint-v1",
        "dims": models.dims(),
        "params": [[p.name, list(p.value.shape)] for p in params],
        "meta": meta or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for p in params:
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Rebuild the model bundle from a checkpoint; returns (models, meta)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint (bad magic)")
    offset = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    try:
        header = json.loads(blob[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: corrupt checkpoint header: {exc}") from exc
    offset += header_len

    dims = header["dims"]
    models = Models(
        dims["d_x"], dims["d_c"], dims["d_z"],
        hidden=dims["hidden"], slope=dims["slope"],
        rng=np.random.default_rng(0),
    )
    by_name = {p.name: p for p in models.params()}
    declared = [name for name, _ in header["params"]]
    if sorted(declared) != sorted(by_name):
        raise DataFormatError(f"{path}: parameter names do not match architecture")
    for name, shape in header["params"]:
        p = by_name[name]
        if list(p.value.shape) != shape:
            raise DataFormatError(
                f"{path}: shape {shape} for {name} does not match {p.value.shape}"
            )
        n = p.value.size * 8
        if offset + n > len(blob):
            raise DataFormatError(f"{path}: truncated parameter block for {name}")
        p.value[...] = np.frombuffer(blob[offset : offset + n], dtype="<f8").reshape(
            p.value.shape
        )
        offset += n
    if offset != len(blob):
        raise DataFormatError(f"{path}: trailing bytes after parameter blocks")
    return models, header["meta"]
