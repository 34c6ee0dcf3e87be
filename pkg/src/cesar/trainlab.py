"""Desk-scale learning task: softmax regression on Gaussian blobs.

Models are flat vectors of length ``d = C * (f + 1)``: the ``C x f`` weight
matrix row-major, then the ``C`` biases.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .maskcrypt import derive_seed
from .metrics import MetricsSink
from .protocol import (
    RoundConfig,
    dpsgd_baseline_round,
    run_cesar_round,
    run_plain_round_oracle,
)
from .sparsifier import SelectionSpec
from .topology import Topology

# seed-tree branches under each experiment seed
_DATA, _PARTITION, _SGD, _PROTOCOL = 1, 2, 3, 4


@dataclass(frozen=True)
class SyntheticDataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __len__(self) -> int:
        return self.labels.size


def make_task(features: int, classes: int, train_samples: int, test_samples: int,
              separation: float, seed: int) -> tuple[SyntheticDataset, SyntheticDataset]:
    """Train/test sets drawn from the same ``classes`` Gaussian blobs.

    Blob centres sit at distance ``separation`` from the origin in random
    directions; samples add unit-variance isotropic noise. Labels are balanced.
    """
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(classes, features))
    centres = separation * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)

    def draw(m: int) -> SyntheticDataset:
        y = rng.permutation(np.arange(m) % classes)
        x = centres[y] + rng.normal(size=(m, features))
        return SyntheticDataset(x, y.astype(np.int64), classes)

    return draw(train_samples), draw(test_samples)


# -- partitioning ---------------------------------------------------------------------


class PartitionMode(str, Enum):
    IID = "iid"
    NON_IID = "noniid"


@dataclass(frozen=True)
class Partition:
    assignment: tuple[np.ndarray, ...]
    mode: PartitionMode


def partition(ds: SyntheticDataset, n: int, mode: PartitionMode | str, seed: int) -> Partition:
    """Disjoint shards, one per node.

    IID shuffles and cuts equal contiguous chunks. Non-IID stable-sorts by
    label, cuts ``2n`` equal chunks and hands each node two of them.
    Leftover samples from uneven division are unused.
    """
    mode = PartitionMode(mode)
    m = len(ds)
    if m < 2 * n:
        raise ConfigError(f"need at least {2 * n} samples for {n} nodes, got {m}")
    rng = np.random.default_rng(seed)
    if mode is PartitionMode.IID:
        order = rng.permutation(m)
        size = m // n
        shards = tuple(np.sort(order[i * size:(i + 1) * size]) for i in range(n))
    else:
        order = np.argsort(ds.labels, kind="stable")
        size = m // (2 * n)
        chunks = [order[c * size:(c + 1) * size] for c in range(2 * n)]
        perm = rng.permutation(2 * n)
        shards = tuple(np.sort(np.concatenate([chunks[perm[2 * i]], chunks[perm[2 * i + 1]]]))
                       for i in range(n))
    return Partition(shards, mode)


# -- model --------------------------------------------------------------------------------


@dataclass
class LinearModel:
    weights: np.ndarray  # (C, f)
    bias: np.ndarray  # (C,)

    @classmethod
    def zeros(cls, classes: int, features: int) -> "LinearModel":
        return cls(np.zeros((classes, features)), np.zeros(classes))

    @classmethod
    def from_vector(cls, vec: np.ndarray, classes: int, features: int) -> "LinearModel":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != classes * (features + 1):
            raise ValueError(f"expected {classes * (features + 1)} parameters, got {vec.size}")
        cut = classes * features
        return cls(vec[:cut].reshape(classes, features).copy(), vec[cut:].copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])

    @property
    def d(self) -> int:
        return self.weights.size + self.bias.size


def model_size(classes: int, features: int) -> int:
    return classes * (features + 1)


def _logits(vec: np.ndarray, x: np.ndarray, classes: int) -> np.ndarray:
    f = x.shape[1]
    w = vec[: classes * f].reshape(classes, f)
    return x @ w.T + vec[classes * f:]


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss_and_grad(vec: np.ndarray, x: np.ndarray, y: np.ndarray, classes: int) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the flat parameters."""
    logp = _log_softmax(_logits(vec, x, classes))
    m = y.size
    loss = -float(logp[np.arange(m), y].mean())
    delta = np.exp(logp)
    delta[np.arange(m), y] -= 1.0
    delta /= m
    return loss, np.concatenate([(delta.T @ x).ravel(), delta.sum(axis=0)])


def local_sgd(vec: np.ndarray, ds: SyntheticDataset, shard: np.ndarray, lr: float,
              batch_size: int, steps: int, seed: int) -> np.ndarray:
    """Plain SGD (no momentum) with minibatches drawn without replacement.

    A fresh permutation of the shard starts whenever the previous one runs out.
    """
    if shard.size == 0:
        raise ConfigError("cannot train on an empty shard")
    rng = np.random.default_rng(seed)
    vec = np.array(vec, dtype=np.float64)
    order = rng.permutation(shard)
    pos = 0
    for _ in range(steps):
        if pos + batch_size > order.size:
            order = rng.permutation(shard)
            pos = 0
        batch = order[pos:pos + batch_size]
        pos += batch_size
        _, g = loss_and_grad(vec, ds.features[batch], ds.labels[batch], ds.n_classes)
        vec -= lr * g
    return vec


def evaluate(vec: np.ndarray, ds: SyntheticDataset) -> tuple[float, float]:
    """``(mean cross-entropy, top-1 accuracy)``; argmax ties go to the lowest class."""
    logp = _log_softmax(_logits(np.asarray(vec, dtype=np.float64), ds.features, ds.n_classes))
    loss = -float(logp[np.arange(ds.labels.size), ds.labels].mean())
    acc = float(np.mean(np.argmax(logp, axis=1) == ds.labels))
    return loss, acc


# -- experiments --------------------------------------------------------------------------


class Algorithm(str, Enum):
    CESAR = "cesar"
    PLAIN_ORACLE = "plain_oracle"
    DPSGD = "dpsgd"


@dataclass(frozen=True)
class TrainConfig:
    features: int = 32
    classes: int = 10
    train_samples: int = 4800
    test_samples: int = 2000
    separation: float = 3.0
    partition: PartitionMode = PartitionMode.NON_IID
    lr: float = 0.05
    batch_size: int = 8
    local_steps: int = 5

    def __post_init__(self):
        object.__setattr__(self, "partition", PartitionMode(self.partition))
        for name in ("features", "classes", "train_samples", "test_samples", "batch_size", "local_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lr < 0:
            raise ConfigError("learning rate must be >= 0")

    @property
    def d(self) -> int:
        return model_size(self.classes, self.features)


@dataclass
class RunTrace:
    """Evaluation series for one (algorithm, seed) run."""

    algorithm: Algorithm
    seed: int
    rounds: list[int] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    kept_fraction: list[float] = field(default_factory=list)
    protocol_bytes: list[float] = field(default_factory=list)
    param_bytes: list[float] = field(default_factory=list)
    meta_bytes: list[float] = field(default_factory=list)
    final_params: np.ndarray | None = None
    sink: MetricsSink = field(default_factory=MetricsSink)

    @property
    def mean_kept_fraction(self) -> float:
        recs = self.sink.records
        return float(np.mean([r.kept_fraction for r in recs])) if recs else float("nan")


METRIC_COLUMNS = ("round", "algorithm", "mean_accuracy", "mean_loss", "kept_fraction",
                  "protocol_bytes", "param_bytes", "meta_bytes")


def _blank_nan(v) -> float | None:
    return None if np.isnan(v) else float(v)


@dataclass
class ExperimentResult:
    runs: list[RunTrace]
    dpsgd_alpha: float | None = None

    def by_algorithm(self, algorithm: Algorithm | str) -> list[RunTrace]:
        algorithm = Algorithm(algorithm)
        return [r for r in self.runs if r.algorithm is algorithm]

    def final_accuracy(self, algorithm: Algorithm | str) -> float:
        return float(np.mean([r.accuracy[-1] for r in self.by_algorithm(algorithm)]))

    def rows(self) -> list[tuple]:
        """Seed-averaged metric rows sorted by (algorithm, round).

        Byte columns are cumulative per-node means; ``kept_fraction`` is the
        running mean over all rounds so far, left empty for the oracle, which
        models no traffic.
        """
        out = []
        for alg in Algorithm:
            runs = self.by_algorithm(alg)
            if not runs:
                continue
            for j, rnd in enumerate(runs[0].rounds):
                out.append((
                    rnd, alg.value,
                    float(np.mean([r.accuracy[j] for r in runs])),
                    float(np.mean([r.loss[j] for r in runs])),
                    _blank_nan(np.mean([r.kept_fraction[j] for r in runs])),
                    float(np.mean([r.protocol_bytes[j] for r in runs])),
                    float(np.mean([r.param_bytes[j] for r in runs])),
                    float(np.mean([r.meta_bytes[j] for r in runs])),
                ))
        return sorted(out, key=lambda row: (row[1], row[0]))

    def sink(self) -> MetricsSink:
        total = MetricsSink()
        for r in self.runs:
            total = total.merge(r.sink)
        return total


def _train_run(algorithm: Algorithm, t: Topology, train: SyntheticDataset, test: SyntheticDataset,
               shards: Partition, round_cfg: RoundConfig, train_cfg: TrainConfig, rounds: int,
               eval_every: int, seed: int, dpsgd_spec: SelectionSpec | None = None) -> RunTrace:
    n, d = t.n, train_cfg.d
    params = np.zeros((n, d))
    proto_root = derive_seed(seed, _PROTOCOL)
    run = RunTrace(algorithm, seed)
    kept, proto, par, meta = [], 0.0, 0.0, 0.0
    for rnd in range(rounds):
        for i in range(n):
            params[i] = local_sgd(params[i], train, shards.assignment[i], train_cfg.lr,
                                  train_cfg.batch_size, train_cfg.local_steps,
                                  derive_seed(seed, _SGD, i, rnd))
        if algorithm is Algorithm.CESAR:
            res = run_cesar_round(params, t, round_cfg, rnd, proto_root)
            params, records = res.params, res.records
        elif algorithm is Algorithm.PLAIN_ORACLE:
            params, records = run_plain_round_oracle(params, t, round_cfg, rnd, proto_root), []
        else:
            res = dpsgd_baseline_round(params, t, dpsgd_spec, round_cfg.averaging, rnd, proto_root)
            params, records = res.params, res.records
        records = [replace(r, seed=seed) for r in records]
        run.sink.add(records)
        if records:
            kept.append(np.mean([r.kept_fraction for r in records]))
            proto += np.mean([r.sent_protocol_bytes for r in records])
            par += np.mean([r.sent_param_bytes for r in records])
            meta += np.mean([r.sent_meta_bytes for r in records])
        if (rnd + 1) % eval_every == 0 or rnd == rounds - 1:
            evals = [evaluate(params[i], test) for i in range(n)]
            run.rounds.append(rnd + 1)
            run.loss.append(float(np.mean([e[0] for e in evals])))
            run.accuracy.append(float(np.mean([e[1] for e in evals])))
            run.kept_fraction.append(float(np.mean(kept)) if kept else float("nan"))
            run.protocol_bytes.append(proto)
            run.param_bytes.append(par)
            run.meta_bytes.append(meta)
    run.final_params = params
    return run


def run_experiment(t: Topology, round_cfg: RoundConfig, train_cfg: TrainConfig, rounds: int,
                   eval_every: int, seeds: Sequence[int],
                   algorithms: Sequence[Algorithm | str] = (Algorithm.CESAR, Algorithm.DPSGD)) -> ExperimentResult:
    """Alternate local SGD with one protocol round per communication round.

    The D-PSGD baseline is budget-matched: it runs after all masked runs and
    samples at the mean fraction the masked protocol actually transmitted.
    """
    algorithms = [Algorithm(a) for a in algorithms]
    if rounds < 1 or eval_every < 1:
        raise ConfigError("rounds and eval_every must be >= 1")
    if train_cfg.d < 1:
        raise ConfigError("model size must be positive")
    data = {}
    for seed in seeds:
        train, test = make_task(train_cfg.features, train_cfg.classes, train_cfg.train_samples,
                                train_cfg.test_samples, train_cfg.separation, derive_seed(seed, _DATA))
        data[seed] = (train, test, partition(train, t.n, train_cfg.partition, derive_seed(seed, _PARTITION)))

    runs: list[RunTrace] = []
    for alg in (Algorithm.CESAR, Algorithm.PLAIN_ORACLE):
        if alg in algorithms:
            for seed in seeds:
                train, test, shards = data[seed]
                runs.append(_train_run(alg, t, train, test, shards, round_cfg, train_cfg, rounds, eval_every, seed))

    dpsgd_alpha = None
    if Algorithm.DPSGD in algorithms:
        cesar_runs = [r for r in runs if r.algorithm is Algorithm.CESAR]
        if cesar_runs:
            dpsgd_alpha = float(np.mean([r.mean_kept_fraction for r in cesar_runs]))
        else:
            dpsgd_alpha = round_cfg.selection.alpha
        spec = SelectionSpec(round_cfg.selection.method, dpsgd_alpha)
        for seed in seeds:
            train, test, shards = data[seed]
            runs.append(_train_run(Algorithm.DPSGD, t, train, test, shards, round_cfg, train_cfg,
                                   rounds, eval_every, seed, dpsgd_spec=spec))
    return ExperimentResult(runs, dpsgd_alpha)

