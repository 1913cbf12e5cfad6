"""scikit-learn style front end.

``LabelSkewSplit`` behaves like a CV splitter (one ``(train, test)`` index
pair per agent) and ``SoHipFederation`` wraps a whole simulated federation
behind ``fit`` / ``predict`` / ``score``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .agent import Variant, predict_logits
from .config import from_mapping
from .data import AgentShard, Dataset, PartitionSpec, _split_train_test, assign_dirichlet, assign_pathological
from .federation import build_agents, run_experiment
from .numeric import make_rng, softmax


class LabelSkewSplit:
    """Non-IID split of a labelled sample across agents.

    Yields one ``(train_index, test_index)`` pair per agent, like
    ``sklearn.model_selection.KFold.split``, except that the pairs are
    disjoint across agents rather than complementary.
    """

    def __init__(self, n_agents=20, mode="pathological", classes_per_agent=2, alpha=0.5, test_fraction=0.2,
                 random_state=0):
        self.n_agents = n_agents
        self.mode = mode
        self.classes_per_agent = classes_per_agent
        self.alpha = alpha
        self.test_fraction = test_fraction
        self.random_state = random_state

    def _spec(self):
        return PartitionSpec(self.mode, self.n_agents, self.classes_per_agent, self.alpha, self.test_fraction,
                             self.random_state)

    def get_n_splits(self, X=None, y=None, groups=None):
        return self.n_agents

    def split(self, X, y, groups=None):
        X, y = check_X_y(X, y)
        labels = LabelEncoder().fit_transform(y)
        k = int(labels.max()) + 1
        spec = self._spec()
        errors = spec.validate(k)
        if errors:
            raise ValueError("; ".join(errors))
        assign = assign_dirichlet if self.mode == "dirichlet" else assign_pathological
        rng = make_rng(spec.seed, 0, 0, "train-test-split")
        for index in assign(labels, k, spec):
            yield _split_train_test(index, labels, self.test_fraction, rng)


class SoHipFederation(ClassifierMixin, BaseEstimator):
    """Simulated federation of heterogeneous agents trained on one labelled sample.

    ``fit`` partitions ``(X, y)`` across ``n_agents`` agents with
    :class:`LabelSkewSplit` and runs the round loop. Afterwards
    ``predict(X, agent_id=i)`` uses agent ``i``'s private model; without an
    agent id the agents' class probabilities are averaged.
    """

    def __init__(self, n_agents=20, participation=0.5, rounds=100, memory_dim=8, feature_dims=(16, 24, 32, 48),
                 batch_size=32, local_epochs=2, lr=0.01, partition="pathological", classes_per_agent=2, alpha=0.5,
                 test_fraction=0.2, variant="full", mode="sohip", eval_interval=5, random_state=0):
        self.n_agents = n_agents
        self.participation = participation
        self.rounds = rounds
        self.memory_dim = memory_dim
        self.feature_dims = feature_dims
        self.batch_size = batch_size
        self.local_epochs = local_epochs
        self.lr = lr
        self.partition = partition
        self.classes_per_agent = classes_per_agent
        self.alpha = alpha
        self.test_fraction = test_fraction
        self.variant = variant
        self.mode = mode
        self.eval_interval = eval_interval
        self.random_state = random_state

    def _config(self, n_classes):
        return from_mapping(dict(
            dataset="array", num_classes=n_classes, num_agents=self.n_agents, participation=self.participation,
            rounds=self.rounds, memory_dim=self.memory_dim, feature_dims=tuple(self.feature_dims),
            batch_size=self.batch_size, local_epochs=self.local_epochs, lr=self.lr, partition=self.partition,
            classes_per_agent=self.classes_per_agent, alpha=self.alpha, test_fraction=self.test_fraction,
            variant=self.variant, mode=self.mode, eval_interval=self.eval_interval, seeds=(self.random_state,),
        ))

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        labels = self._encoder.transform(y)
        cfg = self._config(len(self.classes_))
        ds = Dataset(X, labels, len(self.classes_), "array")
        splitter = LabelSkewSplit(self.n_agents, self.partition, self.classes_per_agent, self.alpha,
                                  self.test_fraction, self.random_state)
        self.shards_ = [
            AgentShard(i, ds.subset(tr), ds.subset(te), tr, te)
            for i, (tr, te) in enumerate(splitter.split(X, labels))
        ]
        self.n_features_in_ = X.shape[1]
        self.agents_ = build_agents(cfg, self.random_state, X.shape[1], len(self.classes_))
        self.metrics_ = run_experiment(cfg, self.random_state, shards=self.shards_, agents=self.agents_)
        self.collective_ = self.metrics_.final_collective
        self._variant = Variant.D_NO_MEMORY if self.mode == "standalone" else Variant.parse(self.variant)
        return self

    def predict_proba(self, X, agent_id=None):
        check_is_fitted(self, "agents_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        agents = self.agents_ if agent_id is None else [self.agents_[agent_id]]
        # agents are evaluated against the last broadcast they received, as in fit
        last = self._last_broadcast()
        probs = [softmax(predict_logits(a, X, last, self._variant)) for a in agents]
        return np.mean(probs, axis=0)

    def predict(self, X, agent_id=None):
        check_is_fitted(self, "agents_")
        return self.classes_[self.predict_proba(X, agent_id).argmax(axis=1)]

    def local_score(self) -> float:
        """Mean over agents of accuracy on their own held-out split."""
        check_is_fitted(self, "metrics_")
        return self.metrics_.final_accuracy

    def _last_broadcast(self):
        return getattr(self.metrics_, "last_broadcast", np.zeros(self.memory_dim))
