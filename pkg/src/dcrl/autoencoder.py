"""MLP encoder/decoder pair and denoising pretraining."""

from __future__ import annotations

import logging

import numpy as np

from . import ndtensor as nd
from .errors import DimensionError, NumericalError
from .ndtensor import AdamState, Tensor, adam_step, as_matrix

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN = (500, 500, 500, 2000)
DEFAULT_LATENT = 10


class EncoderDecoder:
    """Encoder ``d -> hidden... -> m`` and its mirror image decoder.

    ReLU follows every hidden layer; the embedding and the reconstruction
    are linear.
    """

    def __init__(self, input_dim, hidden=DEFAULT_HIDDEN, latent_dim=DEFAULT_LATENT, seed=0):
        self.layer_dims = [int(input_dim), *map(int, hidden), int(latent_dim)]
        if min(self.layer_dims) < 1:
            raise DimensionError(f"layer sizes must be positive: {self.layer_dims}")
        rng = np.random.default_rng(seed)
        dec_dims = self.layer_dims[::-1]
        self.encoder = [self._layer(a, b, rng) for a, b in zip(self.layer_dims[:-1], self.layer_dims[1:])]
        self.decoder = [self._layer(a, b, rng) for a, b in zip(dec_dims[:-1], dec_dims[1:])]

    @staticmethod
    def _layer(fan_in, fan_out, rng):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=(1, fan_out))
        return Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def latent_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def hidden(self):
        return tuple(self.layer_dims[1:-1])

    @property
    def encoder_params(self):
        return [t for layer in self.encoder for t in layer]

    @property
    def decoder_params(self):
        return [t for layer in self.decoder for t in layer]

    @property
    def params(self):
        return self.encoder_params + self.decoder_params

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params)

    @staticmethod
    def _run(layers, x):
        last = len(layers) - 1
        for i, (w, b) in enumerate(layers):
            x = nd.affine(x, w, b)
            if i < last:
                x = nd.relu(x)
        return x

    def encode_t(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.shape[1] != self.input_dim:
            raise DimensionError(f"encoder expects {self.input_dim} columns, got {x.shape[1]}")
        return self._run(self.encoder, x)

    def decode_t(self, z) -> Tensor:
        z = z if isinstance(z, Tensor) else Tensor(z)
        if z.shape[1] != self.latent_dim:
            raise DimensionError(f"decoder expects {self.latent_dim} columns, got {z.shape[1]}")
        return self._run(self.decoder, z)

    def encode(self, x) -> np.ndarray:
        return self._forward(self.encoder, as_matrix(x), self.input_dim, "encoder")

    def decode(self, z) -> np.ndarray:
        return self._forward(self.decoder, as_matrix(z), self.latent_dim, "decoder")

    @staticmethod
    def _forward(layers, x, width, name):
        # plain numpy pass: no tape, same arithmetic as the taped path
        if x.shape[1] != width:
            raise DimensionError(f"{name} expects {width} columns, got {x.shape[1]}")
        last = len(layers) - 1
        for i, (w, b) in enumerate(layers):
            x = x @ w.data + b.data
            if i < last:
                x = np.where(x > 0.0, x, 0.0)
        return x

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def arrays(self):
        """Named parameter arrays in a fixed order (used by checkpoints)."""
        out = []
        for side, layers in (("enc", self.encoder), ("dec", self.decoder)):
            for i, (w, b) in enumerate(layers):
                out.append((f"{side}{i}.w", w))
                out.append((f"{side}{i}.b", b))
        return out


def expected_param_count(layer_dims) -> int:
    enc = sum(a * b + b for a, b in zip(layer_dims[:-1], layer_dims[1:]))
    rev = layer_dims[::-1]
    dec = sum(a * b + b for a, b in zip(rev[:-1], rev[1:]))
    return enc + dec


def pretrain(
    data,
    epochs=100,
    sigma=0.2,
    batch=256,
    lr=1e-3,
    seed=0,
    hidden=DEFAULT_HIDDEN,
    latent_dim=DEFAULT_LATENT,
    model=None,
):
    """Denoising pretraining: reconstruct clean x from x + N(0, sigma^2).

    ``data`` is a Dataset or an (N, d) array. Returns ``(model, losses)``
    where ``losses[e]`` is the sample-weighted mean batch MSE of epoch e.
    """
    x = as_matrix(getattr(data, "x", data))
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if model is None:
        model = EncoderDecoder(x.shape[1], hidden, latent_dim, seed=seed)
    params = model.params
    state = AdamState.for_params(params)
    n = x.shape[0]
    losses = []
    for epoch in range(epochs):
        rng = np.random.default_rng([seed, 1, epoch])
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, batch)):
            idx = order[start:start + batch]
            clean = x[idx]
            noisy = clean + sigma * rng.standard_normal(clean.shape) if sigma > 0 else clean
            model.zero_grad()
            try:
                loss = nd.mse(model.decode_t(model.encode_t(noisy)), clean)
            except NumericalError as err:
                raise NumericalError(f"pretrain epoch {epoch} batch {b}: {err}") from err
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"pretrain epoch {epoch} batch {b}: loss {value}")
            nd.backward(loss)
            adam_step(params, [p.grad for p in params], state, lr)
            total += value * len(idx)
        losses.append(total / n)
        logger.debug("pretrain epoch %d loss %.6g", epoch, losses[-1])
    return model, losses
