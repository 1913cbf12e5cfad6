"""Datasets, CSV ingestion and label-skew partitioning across agents."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import IngestionError, PartitionError
from .numeric import DTYPE, make_rng


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=DTYPE)
        self.labels = np.asarray(self.labels, dtype=np.intp)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ValueError(f"features {self.features.shape} and labels {self.labels.shape} disagree")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, index, name: str | None = None) -> "Dataset":
        index = np.asarray(index, dtype=np.intp)
        return Dataset(self.features[index], self.labels[index], self.num_classes, name or self.name)


@dataclass
class AgentShard:
    agent_id: int
    train: Dataset
    test: Dataset
    train_index: np.ndarray = field(repr=False)
    test_index: np.ndarray = field(repr=False)

    @property
    def class_set(self) -> set[int]:
        return set(np.unique(self.train.labels).tolist())

    @property
    def labels(self) -> np.ndarray:
        return np.concatenate([self.train.labels, self.test.labels])


@dataclass
class PartitionSpec:
    mode: str = "pathological"
    num_agents: int = 20
    classes_per_agent: int = 2
    alpha: float = 0.5
    test_fraction: float = 0.2
    seed: int = 0

    def validate(self, num_classes: int | None = None) -> list[str]:
        errors = []
        if self.mode not in ("pathological", "dirichlet"):
            errors.append(f"partition mode must be 'pathological' or 'dirichlet', got {self.mode!r}")
        if self.num_agents < 1:
            errors.append(f"num_agents must be >= 1, got {self.num_agents}")
        if not 0.0 < self.test_fraction < 1.0:
            errors.append(f"test_fraction must lie in (0, 1), got {self.test_fraction}")
        if self.mode == "pathological":
            if self.classes_per_agent < 1:
                errors.append(f"classes_per_agent must be >= 1, got {self.classes_per_agent}")
            if num_classes is not None and self.classes_per_agent > num_classes:
                errors.append(f"classes_per_agent={self.classes_per_agent} exceeds the {num_classes} classes")
        if self.mode == "dirichlet" and not self.alpha > 0:
            errors.append(f"alpha must be > 0, got {self.alpha}")
        return errors


def generate_synthetic(rng: np.random.Generator, num_classes: int, d_in: int, per_class: int, spread: float,
                       centers=None, name: str = "synthetic") -> Dataset:
    """Balanced Gaussian mixture around unit-norm class centres."""
    if num_classes < 2 or per_class < 2:
        raise ValueError("need at least 2 classes and 2 samples per class")
    if centers is None:
        centers = rng.standard_normal((num_classes, d_in))
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    else:
        centers = np.asarray(centers, dtype=DTYPE)
        if centers.shape != (num_classes, d_in):
            raise ValueError(f"centers must have shape {(num_classes, d_in)}, got {centers.shape}")
    labels = np.repeat(np.arange(num_classes), per_class)
    noise = rng.standard_normal((labels.size, d_in))
    return Dataset(centers[labels] + spread * noise, labels, num_classes, name)


def load_csv(path) -> Dataset:
    """Read ``label,f1,...,fd`` rows; features are min-max scaled per column.

    Constant columns scale to 0. Blank lines are skipped.
    """
    path = Path(path)
    labels, rows = [], []
    width = None
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise IngestionError(f"{path}:{lineno}: expected a label and at least one feature")
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise IngestionError(f"{path}:{lineno}: ragged row with {len(row)} cells, expected {width}")
            try:
                label = float(row[0])
                values = [float(c) for c in row[1:]]
            except ValueError as exc:
                raise IngestionError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
            if label < 0 or label != int(label):
                raise IngestionError(f"{path}:{lineno}: label {row[0]!r} is not a non-negative integer")
            if not np.all(np.isfinite(values)):
                raise IngestionError(f"{path}:{lineno}: non-finite feature value")
            labels.append(int(label))
            rows.append(values)
    if not rows:
        raise IngestionError(f"{path}:1: file contains no data rows")
    X = np.asarray(rows, dtype=DTYPE)
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = hi - lo
    scaled = np.zeros_like(X)
    nz = span > 0
    scaled[:, nz] = (X[:, nz] - lo[nz]) / span[nz]
    y = np.asarray(labels, dtype=np.intp)
    return Dataset(scaled, y, int(y.max()) + 1, path.stem)


def _split_train_test(index: np.ndarray, labels: np.ndarray, test_fraction: float, rng: np.random.Generator):
    """Stratified split of one agent's rows; every test class also appears in train."""
    train, test = [], []
    per_class = []
    for c in np.unique(labels[index]):
        rows = rng.permutation(index[labels[index] == c])
        n_test = min(rows.size - 1, int(np.floor(test_fraction * rows.size + 0.5)))
        per_class.append((rows, n_test))
    if per_class and sum(t for _, t in per_class) == 0:
        # tiny shard: move one sample of its largest class to test, if it can spare one
        j = max(range(len(per_class)), key=lambda i: per_class[i][0].size)
        if per_class[j][0].size >= 2:
            per_class[j] = (per_class[j][0], 1)
    for rows, n_test in per_class:
        test.append(rows[:n_test])
        train.append(rows[n_test:])
    train = np.sort(np.concatenate(train)) if train else np.zeros(0, np.intp)
    test = np.sort(np.concatenate(test)) if test else np.zeros(0, np.intp)
    return train, test


def _make_shards(ds: Dataset, assignment: list[np.ndarray], spec: PartitionSpec) -> list[AgentShard]:
    rng = make_rng(spec.seed, 0, 0, "train-test-split")
    shards = []
    for agent_id, index in enumerate(assignment):
        if index.size == 0:
            raise PartitionError(f"agent {agent_id} received no samples")
        tr, te = _split_train_test(np.asarray(index, dtype=np.intp), ds.labels, spec.test_fraction, rng)
        shards.append(AgentShard(
            agent_id,
            ds.subset(tr, f"{ds.name}/agent{agent_id}/train"),
            ds.subset(te, f"{ds.name}/agent{agent_id}/test"),
            tr, te,
        ))
    return shards


def _check(spec: PartitionSpec, ds: Dataset, mode: str):
    if spec.mode != mode:
        raise PartitionError(f"partition spec has mode {spec.mode!r}, expected {mode!r}")
    errors = spec.validate(ds.num_classes)
    if errors:
        raise PartitionError("; ".join(errors))


def assign_pathological(labels: np.ndarray, num_classes: int, spec: PartitionSpec) -> list[np.ndarray]:
    """Row indices per agent: each agent draws its own classes, holders split a class evenly."""
    rng = make_rng(spec.seed, 0, 0, "partition")
    n = spec.num_agents
    class_sets = [np.sort(rng.choice(num_classes, spec.classes_per_agent, replace=False)) for _ in range(n)]
    parts = [[] for _ in range(n)]
    for k in range(num_classes):
        holders = [a for a in range(n) if k in class_sets[a]]
        if not holders:
            continue
        rows = rng.permutation(np.flatnonzero(labels == k))
        for a, chunk in zip(holders, np.array_split(rows, len(holders))):
            if chunk.size == 0:
                raise PartitionError(
                    f"class {k} has {rows.size} samples for {len(holders)} holders; agent {a} would lack it"
                )
            parts[a].append(chunk)
    return [np.concatenate(p) if p else np.zeros(0, np.intp) for p in parts]


def _largest_remainder(p: np.ndarray, total: int) -> np.ndarray:
    raw = p * total
    counts = np.floor(raw).astype(np.intp)
    short = total - counts.sum()
    if short > 0:
        # stable sort: ties go to the lower agent id
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def assign_dirichlet(labels: np.ndarray, num_classes: int, spec: PartitionSpec) -> list[np.ndarray]:
    """Row indices per agent: each class is split by proportions drawn from Dir(alpha)."""
    rng = make_rng(spec.seed, 0, 0, "partition")
    n = spec.num_agents
    parts = [[] for _ in range(n)]
    for k in range(num_classes):
        rows = rng.permutation(np.flatnonzero(labels == k))
        p = rng.dirichlet(np.full(n, spec.alpha))
        if not np.all(np.isfinite(p)) or p.sum() <= 0:
            p = np.full(n, 1.0 / n)
        counts = _largest_remainder(p / p.sum(), rows.size)
        for a, chunk in enumerate(np.split(rows, np.cumsum(counts)[:-1])):
            parts[a].append(chunk)
    assignment = [np.concatenate(p) for p in parts]
    for a in range(n):
        if assignment[a].size == 0:
            donor = max(range(n), key=lambda j: (assignment[j].size, -j))
            if assignment[donor].size < 2:
                raise PartitionError(f"not enough samples to give agent {a} a non-empty shard")
            assignment[a] = assignment[donor][-1:]
            assignment[donor] = assignment[donor][:-1]
    return assignment


def partition_pathological(ds: Dataset, spec: PartitionSpec) -> list[AgentShard]:
    _check(spec, ds, "pathological")
    return _make_shards(ds, assign_pathological(ds.labels, ds.num_classes, spec), spec)


def partition_dirichlet(ds: Dataset, spec: PartitionSpec) -> list[AgentShard]:
    _check(spec, ds, "dirichlet")
    return _make_shards(ds, assign_dirichlet(ds.labels, ds.num_classes, spec), spec)


def partition(ds: Dataset, spec: PartitionSpec) -> list[AgentShard]:
    if spec.mode == "dirichlet":
        return partition_dirichlet(ds, spec)
    return partition_pathological(ds, spec)


def class_distribution(labels, num_classes: int) -> np.ndarray:
    counts = np.bincount(np.asarray(labels, dtype=np.intp), minlength=num_classes)
    return counts / max(counts.sum(), 1)


def label_skew(shards: list[AgentShard], num_classes: int) -> float:
    """Mean over agents of the largest class share in the agent's data."""
    return float(np.mean([class_distribution(s.labels, num_classes).max() for s in shards]))
