"""Server-side orchestration: client sampling, memory aggregation, the round loop."""
from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .agent import AgentModel, LocalTrainConfig, Variant, build_agent, evaluate, local_round
from .config import ExperimentConfig, participants_per_round
from .data import AgentShard, Dataset, generate_synthetic, load_csv, partition
from .exceptions import ConfigError, NonFiniteError, ProtocolError
from .memory import CollectiveMemory
from .numeric import make_rng
from .wire import BroadcastMsg, Channel, MemoryUploadMsg

log = logging.getLogger(__name__)

CSV_HEADER = ("round", "mean_test_acc", "mean_train_loss", "participants", "uplink_bytes")


@dataclass(frozen=True)
class RoundPlan:
    round: int
    participants: tuple[int, ...]
    weights: tuple[float, ...]

    def weight_of(self) -> dict[int, float]:
        return dict(zip(self.participants, self.weights))


def sample_participants(rng: np.random.Generator, num_agents: int, participation: float, round: int,
                        sizes=None) -> RoundPlan:
    """Uniformly sample floor(C*N) agents; weights follow their train-set sizes."""
    if not 0 < participation <= 1:
        raise ConfigError(f"participation must lie in (0, 1], got {participation}")
    k = participants_per_round(participation, num_agents)
    if k < 1:
        raise ConfigError(f"floor({participation} * {num_agents}) = 0 participants per round")
    chosen = np.sort(rng.choice(num_agents, size=k, replace=False))
    if sizes is None:
        w = np.ones(k)
    else:
        w = np.asarray(sizes, dtype=float)[chosen]
    w = w / w.sum()
    return RoundPlan(round, tuple(int(i) for i in chosen), tuple(float(x) for x in w))


def aggregate(uploads, plan: RoundPlan) -> CollectiveMemory:
    """Weighted sum of uploaded long-term memories, summed in ascending agent id."""
    received = {}
    for agent_id, vec in uploads:
        agent_id = int(agent_id)
        if agent_id in received:
            raise ProtocolError(f"duplicate upload from agent {agent_id} in round {plan.round}")
        if agent_id not in plan.participants:
            raise ProtocolError(f"agent {agent_id} uploaded in round {plan.round} without being sampled")
        received[agent_id] = np.asarray(vec, dtype=float)
    missing = [a for a in plan.participants if a not in received]
    if missing:
        raise ProtocolError(f"missing upload from agent {missing[0]} in round {plan.round}")
    dims = {v.shape for v in received.values()}
    if len(dims) != 1:
        raise ProtocolError(f"uploads disagree on memory shape: {sorted(dims)}")
    weights = plan.weight_of()
    total = np.zeros(dims.pop())
    for agent_id in sorted(received):
        total = total + weights[agent_id] * received[agent_id]
    return CollectiveMemory(total, plan.round)


@dataclass
class EvalRecord:
    round: int
    mean_test_acc: float
    mean_train_loss: float
    participants: int
    uplink_bytes: int


@dataclass
class MetricsLog:
    records: list[EvalRecord] = field(default_factory=list)
    round_losses: list[float] = field(default_factory=list)  # mean participant loss of rounds 1..T
    final_accuracies: list[float] = field(default_factory=list)
    messages: int = 0
    uplink_bytes: int = 0
    downlink_bytes: int = 0
    final_collective: np.ndarray | None = None
    last_broadcast: np.ndarray | None = None

    @property
    def final_accuracy(self) -> float:
        return self.records[-1].mean_test_acc

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.records:
            w.writerow([r.round, repr(r.mean_test_acc), repr(r.mean_train_loss), r.participants, r.uplink_bytes])
        return buf.getvalue()


def build_dataset(cfg: ExperimentConfig, seed: int) -> Dataset:
    if cfg.dataset == "synthetic":
        return generate_synthetic(make_rng(seed, 0, 0, "dataset"), cfg.num_classes, cfg.d_in, cfg.per_class,
                                  cfg.spread)
    return load_csv(cfg.dataset)


def build_shards(cfg: ExperimentConfig, seed: int, dataset: Dataset | None = None) -> list[AgentShard]:
    ds = dataset if dataset is not None else build_dataset(cfg, seed)
    return partition(ds, cfg.partition_spec(seed))


def build_agents(cfg: ExperimentConfig, seed: int, d_in: int, num_classes: int) -> list[AgentModel]:
    """Heterogeneous agents: feature dims cycle through ``cfg.feature_dims``, depth alternates 1/2."""
    return [
        build_agent(seed, i, d_in, cfg.feature_dims[i % len(cfg.feature_dims)], num_classes, cfg.memory_dim,
                    hidden_layers=1 + i % 2)
        for i in range(cfg.num_agents)
    ]


def thread_count() -> int:
    raw = os.environ.get("SOHIP_THREADS")
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"SOHIP_THREADS must be an integer, got {raw!r}") from None


def run_experiment(cfg: ExperimentConfig, seed: int | None = None, *, shards=None, agents=None,
                   transcript=None, threads: int | None = None, standalone: bool | None = None) -> MetricsLog:
    """Run T rounds of the protocol (or the Standalone baseline) and collect metrics.

    ``shards`` and ``agents`` may be supplied to skip their construction;
    supplied agents are trained in place. Frames are dumped to ``transcript``
    when a path is given.
    """
    seed = cfg.seeds[0] if seed is None else seed
    standalone = cfg.mode == "standalone" if standalone is None else standalone
    if shards is None:
        shards = build_shards(cfg, seed)
    if len(shards) != cfg.num_agents:
        raise ConfigError(f"{len(shards)} shards for {cfg.num_agents} agents")
    ds0 = shards[0].train
    if agents is None:
        agents = build_agents(cfg, seed, ds0.n_features, ds0.num_classes)
    variant = Variant.D_NO_MEMORY if standalone else Variant.parse(cfg.variant)
    local_cfg = LocalTrainConfig(cfg.batch_size, cfg.local_epochs, cfg.lr, variant)
    sizes = [len(s.train) for s in shards]
    m = cfg.memory_dim
    workers = thread_count() if threads is None else threads
    metrics = MetricsLog()
    received = np.zeros(m)  # collective memory as last decoded by the agents
    collective = CollectiveMemory.zeros(m)
    pool = ThreadPoolExecutor(workers) if workers > 1 else None

    def evaluate_all(t, loss, n_part, up):
        accs = [evaluate(a, s.test, received, variant) for a, s in zip(agents, shards) if len(s.test)]
        metrics.records.append(EvalRecord(t, float(np.mean(accs)), loss, n_part, up))
        metrics.final_accuracies = accs

    def train(i, t):
        return local_round(agents[i], shards[i], received, local_cfg, make_rng(seed, i, t, "shuffle"))

    try:
        with Channel(transcript) as channel:
            evaluate_all(0, float("nan"), 0, 0)
            for t in range(1, cfg.rounds + 1):
                plan = sample_participants(make_rng(seed, 0, t, "participants"), cfg.num_agents,
                                           cfg.participation, t, sizes)
                if not standalone:
                    frame = channel.send(BroadcastMsg(t, collective.vec).encode(), uplink=False)
                    received = BroadcastMsg.decode(frame).payload
                if pool is None:
                    results = [train(i, t) for i in plan.participants]
                else:
                    results = list(pool.map(lambda i: train(i, t), plan.participants))
                up_before = channel.uplink_bytes
                if not standalone:
                    uploads = []
                    for i, (vec, _) in zip(plan.participants, results):
                        msg = MemoryUploadMsg.decode(channel.send(MemoryUploadMsg(t, i, vec).encode(), uplink=True))
                        if msg.agent_id != i or msg.round != t:
                            raise ProtocolError(f"upload header mismatch for agent {i} in round {t}")
                        uploads.append((msg.agent_id, msg.payload))
                    collective = aggregate(uploads, plan)
                    if not np.all(np.isfinite(collective.vec)):
                        raise NonFiniteError(f"non-finite collective memory after round {t}")
                loss = float(np.mean([r[1] for r in results]))
                metrics.round_losses.append(loss)
                if t % cfg.eval_interval == 0 or t == cfg.rounds:
                    evaluate_all(t, loss, len(plan.participants), channel.uplink_bytes - up_before)
                    log.debug("round %d: mean test accuracy %.4f, train loss %.4f", t,
                              metrics.records[-1].mean_test_acc, loss)
            metrics.messages = channel.messages
            metrics.uplink_bytes = channel.uplink_bytes
            metrics.downlink_bytes = channel.downlink_bytes
    finally:
        if pool is not None:
            pool.shutdown()
    metrics.final_collective = collective.vec
    metrics.last_broadcast = received
    return metrics


def run_standalone(cfg: ExperimentConfig, seed: int | None = None, **kwargs) -> MetricsLog:
    """Each agent trains locally on the same sampling schedule; nothing is exchanged."""
    return run_experiment(cfg, seed, standalone=True, **kwargs)
