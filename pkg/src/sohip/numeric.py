"""Dense numeric core: layers with hand-derived backward passes, SGD, seeded streams.

Vectors and matrices are plain float64 numpy arrays (row-major). Batches are
stacked along axis 0.
"""
from __future__ import annotations

import zlib
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .exceptions import NonFiniteError, ShapeError

DTYPE = np.float64

# sigmoid is clipped into the open interval (0, 1) at float64 resolution
_SIG_LO = np.finfo(DTYPE).tiny
_SIG_HI = np.nextafter(DTYPE(1.0), DTYPE(0.0))

ParamTriple = tuple[str, np.ndarray, np.ndarray]


def make_rng(seed: int, agent_id: int = 0, round: int = 0, purpose: str = "") -> np.random.Generator:
    """Counter-based (Philox) generator for the stream ``(seed, agent_id, round, purpose)``.

    Streams are derived from the key alone, never from a shared generator, so
    the numbers an agent draws do not depend on execution order.
    """
    key = (int(agent_id), int(round), zlib.crc32(purpose.encode()))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


class LinearLayer:
    """Affine map ``y = x @ W.T + b`` with gradient accumulators."""

    def __init__(self, weight, bias):
        self.weight = np.array(weight, dtype=DTYPE)
        self.bias = np.array(bias, dtype=DTYPE)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"weight {self.weight.shape} and bias {self.bias.shape} are inconsistent")
        self.weight_grad = np.zeros_like(self.weight)
        self.bias_grad = np.zeros_like(self.bias)
        self._x = None

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def zeros(cls, in_dim: int, out_dim: int) -> "LinearLayer":
        return cls(np.zeros((out_dim, in_dim)), np.zeros(out_dim))

    def forward(self, x):
        x = np.asarray(x, dtype=DTYPE)
        if x.shape[-1] != self.in_dim:
            raise ShapeError(
                f"input of shape {x.shape} does not match layer weight of shape {self.weight.shape}"
            )
        self._x = x
        return x @ self.weight.T + self.bias

    __call__ = forward

    def apply(self, x):
        """Forward without caching (no state is written)."""
        return np.asarray(x, dtype=DTYPE) @ self.weight.T + self.bias

    def backward(self, grad_out, x=None):
        """Accumulate parameter grads and return the gradient w.r.t. the input.

        ``x`` defaults to the input cached by the last :meth:`forward`.
        """
        if x is None:
            x = self._x
        if x is None:
            raise RuntimeError("backward called before forward: no cached input")
        grad_out = np.asarray(grad_out, dtype=DTYPE)
        if grad_out.ndim == 1:
            self.weight_grad += np.outer(grad_out, x)
            self.bias_grad += grad_out
        else:
            self.weight_grad += grad_out.T @ x
            self.bias_grad += grad_out.sum(axis=0)
        return grad_out @ self.weight

    def parameters(self, prefix: str = "") -> list[ParamTriple]:
        return [
            (prefix + "weight", self.weight, self.weight_grad),
            (prefix + "bias", self.bias, self.bias_grad),
        ]

    def zero_grad(self) -> None:
        self.weight_grad[...] = 0.0
        self.bias_grad[...] = 0.0


def linear_forward(layer: LinearLayer, x):
    return layer.forward(x)


def init_layer(rng: np.random.Generator, in_dim: int, out_dim: int) -> LinearLayer:
    """Uniform fan-in init in ``[-1/sqrt(in_dim), 1/sqrt(in_dim)]``, zero bias."""
    if in_dim < 1 or out_dim < 1:
        raise ShapeError(f"layer dims must be >= 1, got in_dim={in_dim}, out_dim={out_dim}")
    bound = 1.0 / np.sqrt(in_dim)
    weight = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    return LinearLayer(weight, np.zeros(out_dim))


def sigmoid(x):
    x = np.asarray(x, dtype=DTYPE)
    # exp of a non-positive argument only, so nothing overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return np.clip(out, _SIG_LO, _SIG_HI)


def sigmoid_grad(s):
    """Derivative of the sigmoid expressed through its output ``s``."""
    return s * (1.0 - s)


def relu_forward(x):
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


def relu_backward(x, grad_out):
    return np.where(np.asarray(x) > 0, grad_out, 0.0)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    logits = np.atleast_2d(np.asarray(logits, dtype=DTYPE))
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    n, k = logits.shape
    if labels.shape[0] != n:
        raise ShapeError(f"{labels.shape[0]} labels for {n} rows of logits")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k}): got {labels.min()}..{labels.max()}")
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logsum - z[rows, labels]))
    grad = np.exp(z - logsum[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n


def sgd_step(params: Iterable[ParamTriple], lr: float) -> None:
    """In-place ``p -= lr * g`` for each ``(name, p, g)``, then zero ``g``.

    Every gradient is checked before any parameter is touched.
    """
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    params = list(params)
    for name, _, g in params:
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient in parameter {name!r}")
    for _, p, g in params:
        if lr:
            p -= lr * g
        g[...] = 0.0


def finite_diff_grad(f: Callable[[np.ndarray], float], theta, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``theta`` (any shape)."""
    theta = np.array(theta, dtype=DTYPE)
    grad = np.zeros_like(theta)
    flat = theta.reshape(-1)
    g = grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + eps
        fp = f(theta)
        flat[j] = orig - eps
        fm = f(theta)
        flat[j] = orig
        g[j] = (fp - fm) / (2.0 * eps)
    return grad


class MLP:
    """Stack of linear layers with ReLU between them (none after the last)."""

    def __init__(self, layers: Sequence[LinearLayer]):
        if not layers:
            raise ValueError("MLP needs at least one layer")
        for a, b in zip(layers[:-1], layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer output {a.out_dim} does not feed next input {b.in_dim}")
        self.layers = list(layers)
        self._pre = []

    @classmethod
    def init(cls, rng: np.random.Generator, dims: Sequence[int]) -> "MLP":
        return cls([init_layer(rng, a, b) for a, b in zip(dims[:-1], dims[1:])])

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def forward(self, x):
        self._pre = []
        h = self.layers[0].forward(x)
        for layer in self.layers[1:]:
            self._pre.append(h)
            h = layer.forward(relu_forward(h))
        return h

    __call__ = forward

    def apply(self, x):
        h = self.layers[0].apply(x)
        for layer in self.layers[1:]:
            h = layer.apply(relu_forward(h))
        return h

    def backward(self, grad_out):
        g = self.layers[-1].backward(grad_out)
        for layer, pre in zip(reversed(self.layers[:-1]), reversed(self._pre)):
            g = layer.backward(relu_backward(pre, g))
        return g

    def parameters(self, prefix: str = "") -> Iterator[ParamTriple]:
        for i, layer in enumerate(self.layers):
            yield from layer.parameters(f"{prefix}{i}.")
