"""Gated memory operations: short-term abstraction, consolidation, fusion.

Each forward op returns an explicit cache; the matching ``*_backward`` takes
that cache, accumulates gradients into the layers involved and returns the
gradient for the upstream input. Cross-round state (the previous long-term
memory and the broadcast collective memory) is treated as constant.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ShapeError
from .numeric import DTYPE, LinearLayer, init_layer, sigmoid, sigmoid_grad


@dataclass
class GateBank:
    short: LinearLayer  # m -> m
    inp: LinearLayer  # 2m -> m
    forget: LinearLayer  # 2m -> m
    out: LinearLayer  # 2m -> m
    fuse: LinearLayer  # 2m -> m

    @property
    def dim(self) -> int:
        return self.short.out_dim

    @classmethod
    def init(cls, rng: np.random.Generator, m: int) -> "GateBank":
        return cls(
            short=init_layer(rng, m, m),
            inp=init_layer(rng, 2 * m, m),
            forget=init_layer(rng, 2 * m, m),
            out=init_layer(rng, 2 * m, m),
            fuse=init_layer(rng, 2 * m, m),
        )

    @classmethod
    def zeros(cls, m: int) -> "GateBank":
        return cls(*(LinearLayer.zeros(i, m) for i in (m, 2 * m, 2 * m, 2 * m, 2 * m)))

    def layers(self) -> dict[str, LinearLayer]:
        return {"short": self.short, "in": self.inp, "forget": self.forget, "out": self.out, "fuse": self.fuse}

    def parameters(self, prefix: str = ""):
        for name, layer in self.layers().items():
            yield from layer.parameters(f"{prefix}{name}.")


@dataclass
class MemoryState:
    short: np.ndarray
    long: np.ndarray

    @classmethod
    def zeros(cls, m: int) -> "MemoryState":
        return cls(np.zeros(m, dtype=DTYPE), np.zeros(m, dtype=DTYPE))


@dataclass
class CollectiveMemory:
    vec: np.ndarray
    round: int = 0

    @classmethod
    def zeros(cls, m: int, round: int = 0) -> "CollectiveMemory":
        return cls(np.zeros(m, dtype=DTYPE), round)


def _check_vec(name, v, m):
    if v.shape != (m,):
        raise ShapeError(f"{name} has shape {v.shape}, expected ({m},)")


@dataclass
class ShortTermCache:
    z: np.ndarray
    z_bar: np.ndarray
    gate: np.ndarray | None  # None when the importance gate is bypassed
    batch: int


def abstract_short_term(encoder: LinearLayer, gates: GateBank, Z, use_gate: bool = True):
    """Encode a batch, average it, and weight the average by the importance gate."""
    Z = np.atleast_2d(np.asarray(Z, dtype=DTYPE))
    if Z.shape[0] < 1:
        raise ShapeError("empty batch")
    if Z.shape[1] != encoder.in_dim:
        raise ShapeError(f"representations of shape {Z.shape} do not match encoder weight {encoder.weight.shape}")
    z_bar = (Z @ encoder.weight.T + encoder.bias).mean(axis=0)
    if use_gate:
        gate = sigmoid(gates.short.weight @ z_bar + gates.short.bias)
        m_short = gate * z_bar
    else:
        gate = None
        m_short = z_bar.copy()
    return m_short, ShortTermCache(Z, z_bar, gate, Z.shape[0])


def abstract_short_term_backward(encoder: LinearLayer, gates: GateBank, cache: ShortTermCache, grad_short):
    """Returns the gradient w.r.t. the representations ``Z``."""
    if cache.gate is None:
        g_zbar = grad_short
    else:
        s = cache.gate
        g_pre = grad_short * cache.z_bar * sigmoid_grad(s)
        g_zbar = grad_short * s + gates.short.backward(g_pre, cache.z_bar)
    g_enc = np.broadcast_to(g_zbar / cache.batch, (cache.batch, g_zbar.shape[0]))
    return encoder.backward(g_enc, cache.z)


@dataclass
class ConsolidationCache:
    u: np.ndarray
    short: np.ndarray
    long_prev: np.ndarray
    a_in: np.ndarray
    a_f: np.ndarray
    a_o: np.ndarray
    mixed: np.ndarray


def consolidate(gates: GateBank, m_short, m_long_prev):
    """Gated short-to-long update: ``o * (i * short + f * long_prev)``."""
    m = gates.dim
    m_short = np.asarray(m_short, dtype=DTYPE)
    m_long_prev = np.asarray(m_long_prev, dtype=DTYPE)
    _check_vec("short-term memory", m_short, m)
    _check_vec("previous long-term memory", m_long_prev, m)
    u = np.concatenate([m_short, m_long_prev])
    a_in = sigmoid(gates.inp.weight @ u + gates.inp.bias)
    a_f = sigmoid(gates.forget.weight @ u + gates.forget.bias)
    a_o = sigmoid(gates.out.weight @ u + gates.out.bias)
    mixed = a_in * m_short + a_f * m_long_prev
    return a_o * mixed, ConsolidationCache(u, m_short, m_long_prev, a_in, a_f, a_o, mixed)


def consolidate_backward(gates: GateBank, cache: ConsolidationCache, grad_long):
    """Returns the gradient w.r.t. the short-term memory (``long_prev`` is constant)."""
    m = gates.dim
    g_mixed = grad_long * cache.a_o
    g_u = gates.out.backward(grad_long * cache.mixed * sigmoid_grad(cache.a_o), cache.u)
    g_u = g_u + gates.inp.backward(g_mixed * cache.short * sigmoid_grad(cache.a_in), cache.u)
    g_u = g_u + gates.forget.backward(g_mixed * cache.long_prev * sigmoid_grad(cache.a_f), cache.u)
    return g_mixed * cache.a_in + g_u[:m]


@dataclass
class FusionCache:
    v: np.ndarray | None
    collective: np.ndarray
    gate: np.ndarray | None
    complete: np.ndarray
    batch: int = field(default=1)


def fuse_and_enhance(gates: GateBank, decoder: LinearLayer, m_long, m_collective, Z, use_fusion: bool = True):
    """Absorb the collective memory, decode, and add the result to every row of ``Z``.

    Returns ``(Z_hat, complete_memory, cache)``.
    """
    m = gates.dim
    m_long = np.asarray(m_long, dtype=DTYPE)
    m_collective = np.asarray(m_collective, dtype=DTYPE)
    _check_vec("long-term memory", m_long, m)
    _check_vec("collective memory", m_collective, m)
    Z = np.atleast_2d(np.asarray(Z, dtype=DTYPE))
    if Z.shape[1] != decoder.out_dim or decoder.in_dim != m:
        raise ShapeError(f"representations of shape {Z.shape} do not match decoder weight {decoder.weight.shape}")
    if use_fusion:
        v = np.concatenate([m_long, m_collective])
        gate = sigmoid(gates.fuse.weight @ v + gates.fuse.bias)
        complete = gate * m_collective + m_long
    else:
        v = gate = None
        complete = m_long.copy()
    decoded = decoder.weight @ complete + decoder.bias
    z_hat = Z + decoded
    return z_hat, complete, FusionCache(v, m_collective, gate, complete, Z.shape[0])


def fuse_and_enhance_backward(gates: GateBank, decoder: LinearLayer, cache: FusionCache, grad_z_hat):
    """Returns ``(grad_Z, grad_long)``; the collective memory gets no gradient."""
    grad_z_hat = np.atleast_2d(grad_z_hat)
    g_decoded = grad_z_hat.sum(axis=0)
    g_complete = decoder.backward(g_decoded, cache.complete)
    g_long = g_complete
    if cache.gate is not None:
        g_pre = g_complete * cache.collective * sigmoid_grad(cache.gate)
        g_v = gates.fuse.backward(g_pre, cache.v)
        g_long = g_long + g_v[: gates.dim]
    return grad_z_hat, g_long
