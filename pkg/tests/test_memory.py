import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import numeric_param_grad, rel_error
from sohip.exceptions import ShapeError
from sohip.memory import (
    GateBank,
    abstract_short_term,
    abstract_short_term_backward,
    consolidate,
    consolidate_backward,
    fuse_and_enhance,
    fuse_and_enhance_backward,
)
from sohip.numeric import LinearLayer, init_layer, make_rng


def _bank(seed, m):
    return GateBank.init(make_rng(seed, 0, 0, "gates"), m)


def test_identical_rows_average_to_their_encoding(rng):
    enc = init_layer(rng, 4, 2)
    row = rng.normal(size=4)
    gates = GateBank.zeros(2)
    m_short, cache = abstract_short_term(enc, gates, np.tile(row, (5, 1)))
    np.testing.assert_allclose(cache.z_bar, enc.apply(row), rtol=0, atol=1e-15)
    # zero gate layer: importance 0.5 everywhere
    np.testing.assert_array_equal(m_short, 0.5 * cache.z_bar)


def test_short_term_dim_mismatch(rng):
    with pytest.raises(ShapeError):
        abstract_short_term(init_layer(rng, 4, 2), GateBank.zeros(2), np.zeros((3, 5)))


def test_short_term_gradients(rng):
    enc, gates = init_layer(rng, 4, 2), _bank(1, 2)
    Z = rng.normal(size=(3, 4))
    w = rng.normal(size=2)

    def loss():
        return float(abstract_short_term(enc, gates, Z)[0] @ w)

    _, cache = abstract_short_term(enc, gates, Z)
    gz = abstract_short_term_backward(enc, gates, cache, w)
    for layer in (enc, gates.short):
        assert rel_error(layer.weight_grad, numeric_param_grad(loss, layer.weight)) < 1e-3
        assert rel_error(layer.bias_grad, numeric_param_grad(loss, layer.bias)) < 1e-3
    assert rel_error(gz, numeric_param_grad(loss, Z)) < 1e-3


def test_short_term_without_gate_is_plain_mean(rng):
    enc = init_layer(rng, 3, 2)
    Z = rng.normal(size=(4, 3))
    m_short, _ = abstract_short_term(enc, _bank(0, 2), Z, use_gate=False)
    np.testing.assert_allclose(m_short, enc.apply(Z).mean(axis=0), atol=1e-15)


def test_consolidation_zero_gates(rng):
    s, lp = rng.normal(size=3), rng.normal(size=3)
    new, _ = consolidate(GateBank.zeros(3), s, lp)
    np.testing.assert_array_equal(new, 0.5 * (0.5 * s + 0.5 * lp))


def test_consolidation_perfect_retention_limit(rng):
    m = 3
    gates = GateBank.zeros(m)
    gates.inp.bias[:] = -40
    gates.forget.bias[:] = 40
    gates.out.bias[:] = 40
    s, lp = rng.normal(size=m), rng.normal(size=m)
    new, _ = consolidate(gates, s, lp)
    np.testing.assert_allclose(new, lp, rtol=0, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_consolidation_zero_fixed_point(m, seed):
    new, cache = consolidate(_bank(seed, m), np.zeros(m), np.zeros(m))
    assert np.all(new == 0.0)
    for a in (cache.a_in, cache.a_f, cache.a_o):
        assert np.all((a > 0) & (a < 1))


def test_consolidation_gradients(rng):
    m = 3
    gates = _bank(2, m)
    s, lp = rng.normal(size=m), rng.normal(size=m)
    w = rng.normal(size=m)

    def loss():
        return float(consolidate(gates, s, lp)[0] @ w)

    _, cache = consolidate(gates, s, lp)
    gs = consolidate_backward(gates, cache, w)
    for layer in (gates.inp, gates.forget, gates.out):
        assert rel_error(layer.weight_grad, numeric_param_grad(loss, layer.weight)) < 1e-3
        assert rel_error(layer.bias_grad, numeric_param_grad(loss, layer.bias)) < 1e-3
    assert rel_error(gs, numeric_param_grad(loss, s)) < 1e-3


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10_000))
def test_zero_collective_leaves_memory_unchanged(m, extra, seed):
    g = make_rng(seed, 0, 0, "hyp")
    d = m + extra - 1
    gates, dec = _bank(seed, m), init_layer(g, m, d)
    long = g.normal(size=m)
    Z = g.normal(size=(2, d))
    _, complete, _ = fuse_and_enhance(gates, dec, long, np.zeros(m), Z)
    assert complete.tobytes() == long.tobytes()


def test_zero_decoder_is_residual_identity(rng):
    m, d = 2, 4
    Z = rng.normal(size=(3, d))
    z_hat, _, _ = fuse_and_enhance(_bank(0, m), LinearLayer.zeros(m, d), rng.normal(size=m), rng.normal(size=m), Z)
    assert z_hat.tobytes() == Z.tobytes()


def test_fusion_expands_over_batch(rng):
    m, d = 2, 3
    dec = init_layer(rng, m, d)
    Z = rng.normal(size=(4, d))
    z_hat, complete, _ = fuse_and_enhance(_bank(1, m), dec, rng.normal(size=m), rng.normal(size=m), Z)
    delta = z_hat - Z
    np.testing.assert_allclose(delta, np.tile(dec.apply(complete), (4, 1)), atol=1e-14)


def test_fusion_gradients_treat_collective_as_constant(rng):
    m, d = 2, 4
    gates, dec = _bank(3, m), init_layer(rng, m, d)
    dec.bias[:] = rng.normal(size=d)
    long, coll = rng.normal(size=m), rng.normal(size=m)
    Z = rng.normal(size=(3, d))
    w = rng.normal(size=(3, d))

    def loss():
        return float(np.sum(fuse_and_enhance(gates, dec, long, coll, Z)[0] * w))

    _, _, cache = fuse_and_enhance(gates, dec, long, coll, Z)
    gz, glong = fuse_and_enhance_backward(gates, dec, cache, w)
    for layer in (dec, gates.fuse):
        assert rel_error(layer.weight_grad, numeric_param_grad(loss, layer.weight)) < 1e-3
        assert rel_error(layer.bias_grad, numeric_param_grad(loss, layer.bias)) < 1e-3
    assert rel_error(glong, numeric_param_grad(loss, long)) < 1e-3
    assert rel_error(gz, numeric_param_grad(loss, Z)) < 1e-3
    # backward returns nothing for the collective memory; no gate other than fuse was touched
    assert np.all(gates.inp.weight_grad == 0) and np.all(gates.short.weight_grad == 0)


def test_fusion_dim_mismatch(rng):
    with pytest.raises(ShapeError):
        fuse_and_enhance(GateBank.zeros(2), LinearLayer.zeros(2, 3), np.zeros(2), np.zeros(3), np.zeros((1, 3)))
