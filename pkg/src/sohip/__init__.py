"""Collaborative learning in which heterogeneous agents exchange only gated memory vectors."""

from .agent import AgentModel, LocalTrainConfig, Variant, build_agent, evaluate, local_round
from .config import ExperimentConfig, parse_config
from .data import AgentShard, Dataset, PartitionSpec, generate_synthetic, load_csv, partition_dirichlet, partition_pathological
from .estimator import LabelSkewSplit, SoHipFederation
from .federation import MetricsLog, RoundPlan, aggregate, run_experiment, run_standalone, sample_participants
from .memory import CollectiveMemory, GateBank, MemoryState, abstract_short_term, consolidate, fuse_and_enhance
from .wire import BroadcastMsg, MemoryUploadMsg

__version__ = "0.1.0"
