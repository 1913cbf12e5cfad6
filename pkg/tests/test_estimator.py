import numpy as np
import pytest
from sklearn.base import clone

from sohip.data import generate_synthetic
from sohip.estimator import LabelSkewSplit, SoHipFederation
from sohip.numeric import make_rng

SMALL = dict(n_agents=4, participation=0.5, rounds=4, memory_dim=2, feature_dims=(3, 4), batch_size=8,
             local_epochs=1, eval_interval=2, random_state=1)


@pytest.fixture
def blobs():
    ds = generate_synthetic(make_rng(0), 4, 5, 25, 0.3)
    # string labels exercise the label encoding
    return ds.features, np.array(["a", "b", "c", "d"])[ds.labels]


def test_params_round_trip_and_clone():
    est = SoHipFederation(**SMALL)
    params = est.get_params()
    assert params["memory_dim"] == 2 and params["random_state"] == 1
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(rounds=9)
    assert est.rounds == 9 and twin.rounds == 4


def test_fit_predict(blobs):
    X, y = blobs
    est = SoHipFederation(**SMALL).fit(X, y)
    assert est.n_features_in_ == 5
    assert list(est.classes_) == ["a", "b", "c", "d"]
    pred = est.predict(X)
    assert pred.shape == (len(X),) and set(pred) <= set(est.classes_)
    proba = est.predict_proba(X[:7], agent_id=2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    assert 0.0 <= est.score(X, y) <= 1.0
    assert est.local_score() == est.metrics_.final_accuracy
    assert len(est.shards_) == len(est.agents_) == 4


def test_fit_is_deterministic(blobs):
    X, y = blobs
    a = SoHipFederation(**SMALL).fit(X, y).predict_proba(X)
    b = SoHipFederation(**SMALL).fit(X, y).predict_proba(X)
    assert a.tobytes() == b.tobytes()


def test_standalone_has_no_collective(blobs):
    X, y = blobs
    est = SoHipFederation(**SMALL, mode="standalone").fit(X, y)
    assert est.metrics_.uplink_bytes == 0


def test_predict_validates_input(blobs):
    X, y = blobs
    est = SoHipFederation(**SMALL).fit(X, y)
    with pytest.raises(ValueError, match="features"):
        est.predict(X[:, :3])


def test_unfitted_raises():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        SoHipFederation().predict(np.zeros((2, 3)))


def test_splitter_yields_disjoint_pairs(blobs):
    X, y = blobs
    split = LabelSkewSplit(n_agents=4, classes_per_agent=2, random_state=3)
    pairs = list(split.split(X, y))
    assert len(pairs) == split.get_n_splits() == 4
    seen = np.concatenate([np.concatenate(p) for p in pairs])
    assert len(seen) == len(set(seen.tolist()))
    for tr, te in pairs:
        assert len(set(y[tr])) == 2
        assert set(y[te]) <= set(y[tr])


def test_splitter_rejects_bad_settings(blobs):
    X, y = blobs
    with pytest.raises(ValueError):
        list(LabelSkewSplit(n_agents=2, classes_per_agent=9).split(X, y))
