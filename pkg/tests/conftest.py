import numpy as np
import pytest

from sohip.agent import build_agent
from sohip.numeric import make_rng


def rel_error(a, b, floor=1e-8):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def numeric_param_grad(loss_fn, param, eps=1e-4):
    """Central differences of ``loss_fn()`` w.r.t. ``param``, perturbed in place."""
    grad = np.zeros_like(param)
    flat, g = param.reshape(-1), grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + eps
        fp = loss_fn()
        flat[j] = orig - eps
        fm = loss_fn()
        flat[j] = orig
        g[j] = (fp - fm) / (2 * eps)
    return grad


def toy_agent(seed, d_in=4, d_i=5, k=3, m=2, hidden=1, long_prev=True):
    agent = build_agent(seed, 0, d_in, d_i, k, m, hidden_layers=hidden)
    if long_prev:
        agent.memory.long = make_rng(seed, 0, 0, "test-long").normal(size=m)
    return agent


@pytest.fixture
def rng():
    return make_rng(12345, 0, 0, "tests")
