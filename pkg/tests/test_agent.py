import math

import numpy as np
import pytest

import oracles
from conftest import numeric_param_grad, rel_error, toy_agent
from sohip.agent import (
    LocalTrainConfig,
    Variant,
    batch_loss,
    build_agent,
    evaluate,
    local_round,
    train_batch,
)
from sohip.data import Dataset
from sohip.exceptions import NonFiniteError, ShapeError
from sohip.memory import CollectiveMemory
from sohip.numeric import make_rng


def _batch(seed, n, d_in, k):
    g = make_rng(seed, 0, 0, "batch")
    return g.normal(size=(n, d_in)), g.integers(0, k, size=n)


def _max_grad_error(agent, X, y, coll, variant):
    train_batch(agent, X, y, coll, variant)
    worst = 0.0
    for name, p, g in agent.parameters():
        analytic = g.copy()
        numeric = numeric_param_grad(lambda: batch_loss(agent, X, y, coll, variant), p)
        worst = max(worst, rel_error(analytic, numeric))
    return worst


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("hidden", [1, 2])
def test_end_to_end_gradient_check(variant, hidden):
    agent = toy_agent(3 + hidden, d_in=4, d_i=5, k=3, m=3, hidden=hidden)
    X, y = _batch(hidden, 4, 4, 3)
    coll = make_rng(9).normal(size=3)
    assert _max_grad_error(agent, X, y, coll, variant) < 1e-3


def test_variant_d_trains_backbone_only_and_uploads_zeros():
    agent = toy_agent(1, m=2)
    before = {n: p.copy() for n, p, _ in agent.memory_parameters()}
    long_before = agent.memory.long.copy()
    X, y = _batch(0, 10, 4, 3)
    upload, _ = local_round(agent, Dataset(X, y, 3), np.zeros(2), LocalTrainConfig(4, 1, 0.1, "d"), make_rng(0))
    assert np.all(upload == 0.0)
    assert all(np.array_equal(before[n], p) for n, p, _ in agent.memory_parameters())
    assert np.array_equal(agent.memory.long, long_before)


def test_zero_lr_freezes_parameters_but_memory_moves():
    agent = toy_agent(2, m=2, long_prev=False)
    before = agent.state_hash()
    params = [p.copy() for _, p, _ in agent.parameters()]
    X, y = _batch(1, 12, 4, 3)
    upload, _ = local_round(agent, Dataset(X, y, 3), np.zeros(2), LocalTrainConfig(5, 1, 0.0), make_rng(1))
    assert all(np.array_equal(a, p) for a, (_, p, _) in zip(params, agent.parameters()))
    assert agent.state_hash() != before
    assert np.any(upload != 0.0)


def test_single_batch_upload_matches_oracle():
    for agent_id, d_i in ((0, 5), (1, 7)):
        agent = build_agent(21, agent_id, 4, d_i, 3, 2, hidden_layers=1 + agent_id)
        X, y = _batch(agent_id, 6, 4, 3)
        expected = oracles.long_term_memory(agent, X.tolist(), [0.0, 0.0])
        upload, _ = local_round(agent, Dataset(X, y, 3), np.zeros(2), LocalTrainConfig(32, 1, 0.01),
                                make_rng(0))
        np.testing.assert_allclose(upload, expected, rtol=0, atol=1e-10)


@pytest.mark.parametrize("d_i", [2, 9, 33])
def test_upload_has_memory_dim_for_any_feature_dim(d_i):
    agent = build_agent(0, 0, 3, d_i, 2, 2)
    X, y = _batch(0, 5, 3, 2)
    upload, _ = local_round(agent, Dataset(X, y, 2), np.zeros(2), LocalTrainConfig(2, 1, 0.01), make_rng(0))
    assert upload.shape == (2,)


def test_memory_dim_cannot_exceed_feature_dim():
    with pytest.raises(ShapeError, match="m=4"):
        build_agent(0, 0, 3, 3, 2, 4)


def test_collective_dim_checked():
    agent = toy_agent(0, m=2)
    X, y = _batch(0, 4, 4, 3)
    with pytest.raises(ShapeError):
        local_round(agent, Dataset(X, y, 3), np.zeros(3), LocalTrainConfig(), make_rng(0))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts():
    agent = toy_agent(0, m=2)
    agent.classifier.weight[0, 0] = np.inf
    X, y = _batch(0, 4, 4, 3)
    with pytest.raises(NonFiniteError, match="agent 0, epoch 0"):
        local_round(agent, Dataset(X, y, 3), np.zeros(2), LocalTrainConfig(), make_rng(0))


def test_empty_shard_rejected():
    agent = toy_agent(0, m=2)
    with pytest.raises(ValueError, match="empty"):
        local_round(agent, Dataset(np.zeros((0, 4)), np.zeros(0), 3), np.zeros(2), LocalTrainConfig(), make_rng(0))


def test_evaluate_perfect_model():
    agent = build_agent(0, 0, 2, 2, 2, 1)
    ext = agent.extractor.layers
    ext[0].weight[:] = np.eye(2)
    ext[-1].weight[:] = np.eye(2)
    agent.classifier.weight[:] = 100 * np.eye(2)
    agent.decoder.weight[:] = 0.0
    X = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.1]])
    assert evaluate(agent, Dataset(X, [0, 1, 0], 2), np.zeros(1)) == 1.0


def test_random_model_is_at_chance():
    k, n = 5, 2000
    g = make_rng(4, 0, 0, "chance")
    # labels independent of the features, so correct predictions are Bernoulli(1/k)
    test = Dataset(g.normal(size=(n, 6)), g.permutation(np.repeat(np.arange(k), n // k)), k)
    acc = evaluate(build_agent(8, 0, 6, 8, k, 4), test, np.zeros(4))
    assert abs(acc - 1 / k) < 3 * math.sqrt((1 / k) * (1 - 1 / k) / n)


def test_evaluate_writes_nothing():
    agent = toy_agent(5, m=2)
    X, y = _batch(2, 8, 4, 3)
    test = Dataset(X, y, 3)
    coll = CollectiveMemory(np.array([0.3, -0.2]), 1)
    before = agent.state_hash()
    a, b = evaluate(agent, test, coll), evaluate(agent, test, coll)
    assert a == b
    assert agent.state_hash() == before


def test_local_round_depends_only_on_own_inputs():
    X, y = _batch(3, 9, 4, 3)

    def go(with_neighbour):
        a = build_agent(1, 0, 4, 5, 3, 2)
        if with_neighbour:
            b = build_agent(1, 1, 4, 5, 3, 2)
            local_round(b, Dataset(X[::-1], y[::-1], 3), np.ones(2), LocalTrainConfig(3, 1, 0.5), make_rng(7))
        return local_round(a, Dataset(X, y, 3), np.zeros(2), LocalTrainConfig(3, 2, 0.05), make_rng(2))

    (u1, l1), (u2, l2) = go(False), go(True)
    assert u1.tobytes() == u2.tobytes() and l1 == l2


def test_variant_parse():
    assert Variant.parse("A") is Variant.A_NO_SHORT_GATE
    assert Variant.parse("full") is Variant.FULL
    with pytest.raises(ValueError):
        Variant.parse("e")
