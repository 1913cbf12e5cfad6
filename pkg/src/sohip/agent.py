"""One heterogeneous agent: private model stack, local training round, evaluation."""
from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass

import numpy as np

from .exceptions import NonFiniteError, ShapeError
from .memory import (
    CollectiveMemory,
    GateBank,
    MemoryState,
    abstract_short_term,
    abstract_short_term_backward,
    consolidate,
    consolidate_backward,
    fuse_and_enhance,
    fuse_and_enhance_backward,
)
from .numeric import MLP, LinearLayer, init_layer, make_rng, sgd_step, sigmoid, softmax_cross_entropy


class Variant(str, enum.Enum):
    """Full protocol, or one of the ablations that switch memory components off."""

    FULL = "full"
    A_NO_SHORT_GATE = "a"
    B_NO_CONSOLIDATION = "b"
    C_NO_COLLECTIVE_FUSION = "c"
    D_NO_MEMORY = "d"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        v = str(value).strip().lower()
        for member in cls:
            if v in (member.value, member.name.lower()):
                return member
        raise ValueError(f"unknown variant {value!r}; expected one of full, a, b, c, d")

    @property
    def uses_memory(self) -> bool:
        return self is not Variant.D_NO_MEMORY


@dataclass
class LocalTrainConfig:
    batch_size: int = 32
    local_epochs: int = 2
    lr: float = 0.01
    variant: Variant = Variant.FULL

    def __post_init__(self):
        self.variant = Variant.parse(self.variant)
        if self.batch_size < 1 or self.local_epochs < 1:
            raise ValueError("batch_size and local_epochs must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")


@dataclass
class AgentModel:
    agent_id: int
    extractor: MLP
    classifier: LinearLayer
    encoder: LinearLayer
    decoder: LinearLayer
    gates: GateBank
    memory: MemoryState

    def __post_init__(self):
        d, m = self.feature_dim, self.memory_dim
        if m > d:
            raise ShapeError(f"memory dim m={m} exceeds feature dim d_i={d}")
        if self.classifier.in_dim != d or self.encoder.in_dim != d or self.decoder.out_dim != d:
            raise ShapeError("classifier/encoder/decoder do not agree on feature dim")
        if self.encoder.out_dim != m or self.decoder.in_dim != m:
            raise ShapeError("encoder/decoder do not agree with the gate memory dim")

    @property
    def feature_dim(self) -> int:
        return self.extractor.out_dim

    @property
    def memory_dim(self) -> int:
        return self.gates.dim

    @property
    def num_classes(self) -> int:
        return self.classifier.out_dim

    def backbone_parameters(self):
        yield from self.extractor.parameters("extractor.")
        yield from self.classifier.parameters("classifier.")

    def memory_parameters(self):
        yield from self.encoder.parameters("encoder.")
        yield from self.decoder.parameters("decoder.")
        yield from self.gates.parameters("gates.")

    def parameters(self):
        yield from self.backbone_parameters()
        yield from self.memory_parameters()

    def state_hash(self) -> str:
        h = hashlib.sha256()
        for name, p, _ in self.parameters():
            h.update(name.encode())
            h.update(p.tobytes())
        h.update(self.memory.short.tobytes())
        h.update(self.memory.long.tobytes())
        return h.hexdigest()


def build_agent(seed: int, agent_id: int, d_in: int, feature_dim: int, num_classes: int, memory_dim: int,
                hidden_layers: int = 1) -> AgentModel:
    """Initialise an agent; the backbone and memory modules draw from separate streams."""
    if hidden_layers not in (1, 2):
        raise ValueError("hidden_layers must be 1 or 2")
    dims = [d_in] + [feature_dim] * (hidden_layers + 1)
    extractor = MLP.init(make_rng(seed, agent_id, 0, "extractor"), dims)
    classifier = init_layer(make_rng(seed, agent_id, 0, "classifier"), feature_dim, num_classes)
    rng = make_rng(seed, agent_id, 0, "memory")
    encoder = init_layer(rng, feature_dim, memory_dim)
    decoder = init_layer(rng, memory_dim, feature_dim)
    gates = GateBank.init(rng, memory_dim)
    return AgentModel(agent_id, extractor, classifier, encoder, decoder, gates, MemoryState.zeros(memory_dim))


def train_batch(model: AgentModel, X, y, collective, variant: Variant = Variant.FULL):
    """Forward + backward on one batch; gradients accumulate in the model.

    Returns ``(loss, short_memory, new_long_memory)``. The model's stored
    memory is not modified here; ``None`` memories are returned for variant D.
    """
    loss, logits_grad, ctx = _forward(model, X, y, collective, variant)
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite loss {loss}")
    g = model.classifier.backward(logits_grad)
    if ctx is not None:
        fuse_cache, cons_cache, short_cache, m_short, m_long = ctx
        g_z, g_long = fuse_and_enhance_backward(model.gates, model.decoder, fuse_cache, g)
        g_short = g_long if cons_cache is None else consolidate_backward(model.gates, cons_cache, g_long)
        g = g_z + abstract_short_term_backward(model.encoder, model.gates, short_cache, g_short)
        model.extractor.backward(g)
        return loss, m_short, m_long
    model.extractor.backward(g)
    return loss, None, None


def batch_loss(model: AgentModel, X, y, collective, variant: Variant = Variant.FULL) -> float:
    """Loss of one batch as a pure function of the parameters (no grads, no memory writes)."""
    return _forward(model, X, y, collective, variant)[0]


def _forward(model, X, y, collective, variant):
    variant = Variant.parse(variant)
    Z = model.extractor.forward(X)
    if not variant.uses_memory:
        loss, grad = softmax_cross_entropy(model.classifier.forward(Z), y)
        return loss, grad, None
    m_short, short_cache = abstract_short_term(
        model.encoder, model.gates, Z, use_gate=variant is not Variant.A_NO_SHORT_GATE
    )
    if variant is Variant.B_NO_CONSOLIDATION:
        m_long, cons_cache = m_short, None
    else:
        m_long, cons_cache = consolidate(model.gates, m_short, model.memory.long)
    z_hat, _, fuse_cache = fuse_and_enhance(
        model.gates, model.decoder, m_long, _vec(collective), Z,
        use_fusion=variant is not Variant.C_NO_COLLECTIVE_FUSION,
    )
    loss, grad = softmax_cross_entropy(model.classifier.forward(z_hat), y)
    return loss, grad, (fuse_cache, cons_cache, short_cache, m_short, m_long)


def _vec(collective):
    return collective.vec if isinstance(collective, CollectiveMemory) else np.asarray(collective, dtype=float)


def local_round(model: AgentModel, shard, collective, cfg: LocalTrainConfig, rng: np.random.Generator):
    """Run ``cfg.local_epochs`` epochs of mini-batch SGD over the shard's training split.

    ``shard`` is an :class:`~sohip.data.AgentShard` (a bare
    :class:`~sohip.data.Dataset` is used as-is). Long-term memory is
    consolidated on every batch; the value after the last batch is returned
    as the upload together with the mean batch loss. Variant D uploads zeros.
    """
    train = getattr(shard, "train", shard)
    X, y = train.features, train.labels
    n = X.shape[0]
    if n == 0:
        raise ValueError(f"agent {model.agent_id} has an empty training shard")
    if _vec(collective).shape != (model.memory_dim,):
        raise ShapeError(f"collective memory has shape {_vec(collective).shape}, expected ({model.memory_dim},)")
    variant = cfg.variant
    params = list(model.parameters() if variant.uses_memory else model.backbone_parameters())
    losses = []
    for epoch in range(cfg.local_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            try:
                loss, m_short, m_long = train_batch(model, X[idx], y[idx], collective, variant)
                sgd_step(params, cfg.lr)
            except NonFiniteError as exc:
                raise NonFiniteError(
                    f"agent {model.agent_id}, epoch {epoch}, batch starting at {start}: {exc}"
                ) from None
            if m_long is not None:
                model.memory.short = m_short
                model.memory.long = m_long
            losses.append(loss)
    if variant.uses_memory:
        upload = model.memory.long.copy()
    else:
        upload = np.zeros(model.memory_dim)
    return upload, float(np.mean(losses))


def predict_logits(model: AgentModel, X, collective, variant: Variant = Variant.FULL):
    """Inference path: stored long-term memory fused with the latest broadcast; writes nothing."""
    variant = Variant.parse(variant)
    Z = model.extractor.apply(X)
    if variant.uses_memory:
        long = model.memory.long
        if variant is Variant.C_NO_COLLECTIVE_FUSION:
            complete = long
        else:
            cvec = _vec(collective)
            v = np.concatenate([long, cvec])
            gate = sigmoid(model.gates.fuse.weight @ v + model.gates.fuse.bias)
            complete = gate * cvec + long
        Z = Z + model.decoder.apply(complete)
    return model.classifier.apply(Z)


def evaluate(model: AgentModel, test, collective, variant: Variant = Variant.FULL) -> float:
    if test.features.shape[0] == 0:
        raise ValueError(f"agent {model.agent_id} has an empty test set")
    pred = predict_logits(model, test.features, collective, variant).argmax(axis=1)
    return float(np.mean(pred == test.labels))
