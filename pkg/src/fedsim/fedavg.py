"""Synchronous federated averaging over simulated clients.

One communication round broadcasts the global parameters to every client
(full participation), runs local SGD on each client's shard, and averages the
returned parameters weighted by shard size. Per-client randomness is re-seeded
each round from derive_seed(config.seed, client, round), so results are
bitwise-identical whether clients run sequentially or on a thread pool.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Dataset, Shard, partition_iid
from .errors import ConfigError, TrainingDiverged
from .models import Batch, ModelSpec, accuracy, evaluate_loss, featurize_dataset, init_params, loss_and_gradient
from .rng import SplitMix64, derive_seed


@dataclass(frozen=True)
class FedConfig:
    """Hyperparameters of a federated run. Defaults: two local epochs per
    round with mini-batches of 32, every round evaluated."""

    num_clients: int
    learning_rate: float
    rounds: int
    seed: int = 0
    local_epochs: int = 2
    batch_size: int = 32
    eval_every: int = 1

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.local_epochs < 1:
            raise ConfigError("local_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")


@dataclass(frozen=True)
class LocalUpdate:
    """A client's trained parameters, its shard size, and the mean per-batch
    training loss observed while producing them."""

    params: np.ndarray
    num_examples: int
    mean_train_loss: float


@dataclass(frozen=True)
class RoundRecord:
    """Metrics of one evaluated communication round (1-based index)."""

    round_index: int
    test_accuracy: float
    test_loss: float
    train_loss: float
    wall_seconds: float


@dataclass(frozen=True)
class TrainingResult:
    records: tuple
    final_params: np.ndarray
    param_trajectory: tuple = ()


def local_train(
    spec: ModelSpec,
    params: np.ndarray,
    shard,
    examples,
    *,
    local_epochs: int,
    batch_size: int,
    learning_rate: float,
    rng_seed: int,
) -> LocalUpdate:
    """Run SGD on one client's shard for ``local_epochs`` epochs.

    Each epoch reshuffles the shard with the client's seeded stream and walks
    contiguous mini-batches of ``batch_size`` (final partial batch included),
    applying ``params -= learning_rate * grad`` per batch. The caller's params
    array is never mutated.
    """
    indices = shard.indices if isinstance(shard, Shard) else np.asarray(shard, dtype=np.int64)
    if len(indices) == 0:
        raise ConfigError("cannot train on an empty shard")
    rng = SplitMix64(rng_seed)
    theta = np.array(params, dtype=np.float64, copy=True)
    loss_total = 0.0
    steps = 0
    for _ in range(local_epochs):
        shuffled = indices[rng.permutation(len(indices))]
        for start in range(0, len(shuffled), batch_size):
            batch = Batch(tuple(examples[i] for i in shuffled[start : start + batch_size]))
            batch_loss, grad = loss_and_gradient(spec, theta, batch)
            theta = theta - learning_rate * grad
            loss_total += batch_loss
            steps += 1
    return LocalUpdate(theta, len(indices), loss_total / steps)


def aggregate(updates) -> np.ndarray:
    """Average parameter vectors weighted by example counts.

    Sums in ascending input order with weights n_k / sum(n), then clamps each
    coordinate to the [min, max] envelope of the inputs. The clamp is a
    projection onto the interval the exact average provably lies in; it
    absorbs last-ulp rounding so identical inputs aggregate to themselves
    bitwise.
    """
    updates = list(updates)
    if not updates:
        raise ConfigError("aggregate requires at least one update")
    dimension = updates[0][0].shape
    total = 0
    for params, count in updates:
        if params.shape != dimension:
            raise ValueError("parameter dimension mismatch across updates")
        if count < 1:
            raise ConfigError("update weights must be >= 1")
        total += count
    merged = np.zeros(dimension)
    lower = np.full(dimension, np.inf)
    upper = np.full(dimension, -np.inf)
    for params, count in updates:
        merged += (count / total) * params
        np.minimum(lower, params, out=lower)
        np.maximum(upper, params, out=upper)
    return np.clip(merged, lower, upper)


def _client_updates(spec, params, shards, examples, config, round_index, executor=None):
    def train_one(shard: Shard) -> LocalUpdate:
        return local_train(
            spec,
            params,
            shard,
            examples,
            local_epochs=config.local_epochs,
            batch_size=config.batch_size,
            learning_rate=config.learning_rate,
            rng_seed=derive_seed(config.seed, shard.owner, round_index),
        )

    if executor is None:
        return [train_one(shard) for shard in shards]
    return list(executor.map(train_one, shards))


def run_round(
    spec: ModelSpec,
    params: np.ndarray,
    shards,
    train_examples,
    test_examples,
    config: FedConfig,
    round_index: int,
    executor: ThreadPoolExecutor | None = None,
) -> tuple[np.ndarray, RoundRecord | None]:
    """One broadcast / local-train / aggregate cycle.

    Clients may train concurrently on ``executor``; aggregation is ordered by
    client index regardless. Test metrics are computed when ``round_index`` is
    a multiple of ``config.eval_every``; other rounds return record ``None``.
    """
    if not shards:
        raise ConfigError("run_round requires at least one client shard")
    started = time.perf_counter()
    updates = _client_updates(spec, params, shards, train_examples, config, round_index, executor)
    merged = aggregate([(u.params, u.num_examples) for u in updates])
    if not np.isfinite(merged).all():
        raise TrainingDiverged(round_index, ())
    record = None
    if round_index % config.eval_every == 0:
        record = RoundRecord(
            round_index=round_index,
            test_accuracy=accuracy(spec, merged, test_examples),
            test_loss=evaluate_loss(spec, merged, test_examples),
            train_loss=sum(u.mean_train_loss for u in updates) / len(updates),
            wall_seconds=time.perf_counter() - started,
        )
    return merged, record


def run_training(
    spec: ModelSpec,
    train_set: Dataset,
    test_set: Dataset,
    config: FedConfig,
    *,
    threads: int = 1,
    capture_params: bool = False,
) -> TrainingResult:
    """Full federated run: partition, then ``config.rounds`` communication
    rounds.

    Partitioning uses partition_iid(train_set, K, config.seed) and the model
    initializes from init_params(spec, config.seed). Raises TrainingDiverged
    (carrying the records collected so far) if parameters go non-finite.
    Results are bitwise-independent of ``threads``.
    """
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    shards = partition_iid(train_set, config.num_clients, config.seed)
    train_examples = featurize_dataset(spec, train_set)
    test_examples = featurize_dataset(spec, test_set)
    params = init_params(spec, config.seed)
    records: list[RoundRecord] = []
    trajectory: list[np.ndarray] = []
    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for round_index in range(1, config.rounds + 1):
            try:
                params, record = run_round(
                    spec, params, shards, train_examples, test_examples, config, round_index, executor
                )
            except TrainingDiverged as diverged:
                raise TrainingDiverged(diverged.round_index, tuple(records)) from None
            if record is not None:
                records.append(record)
            if capture_params:
                trajectory.append(params)
    finally:
        if executor is not None:
            executor.shutdown()
    return TrainingResult(tuple(records), params, tuple(trajectory))
