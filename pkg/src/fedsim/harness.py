"""Experiment harness: fixed-budget baselines and client-count sweeps.

The protocol trains a single-client baseline for a fixed round budget, takes
its final test accuracy as the reference, and then asks for each client count
K how many rounds federated training needs to reach 90% of that reference.
Runs that never reach the target inside an extended threshold budget are
reported as failures rather than extrapolated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .data import Dataset
from .errors import ConfigError, TrainingDiverged
from .fedavg import FedConfig, RoundRecord, TrainingResult, run_training
from .models import ModelSpec


@dataclass(frozen=True)
class ExperimentPlan:
    """A sweep definition: which client counts to try, the baseline budget,
    and the extended budget used when probing for the target round."""

    baseline_rounds: int
    threshold_rounds: int
    client_counts: tuple = (1, 2, 4, 8, 16, 32)
    target_fraction: float = 0.9

    def __post_init__(self):
        if self.baseline_rounds < 1:
            raise ConfigError("baseline_rounds must be >= 1")
        if self.threshold_rounds < self.baseline_rounds:
            raise ConfigError("threshold_rounds must be >= baseline_rounds")
        if not self.client_counts:
            raise ConfigError("client_counts must be non-empty")
        if self.client_counts[0] != 1:
            raise ConfigError("client_counts must start at 1 (the baseline)")
        for a, b in zip(self.client_counts, self.client_counts[1:]):
            if b <= a:
                raise ConfigError("client_counts must be strictly increasing")
        if not 0 < self.target_fraction <= 1:
            raise ConfigError("target_fraction must be in (0, 1]")


@dataclass(frozen=True)
class SweepRow:
    """Outcome for one client count. ``rounds_to_target`` is None when the
    run never reached the target within the threshold budget (a failure), and
    ``final_accuracy_at_budget`` is None when the run diverged before the
    baseline budget elapsed."""

    num_clients: int
    final_accuracy_at_budget: float | None
    rounds_to_target: int | None
    diverged: bool

    def to_json_dict(self) -> dict:
        return {
            "num_clients": self.num_clients,
            "final_accuracy_at_budget": self.final_accuracy_at_budget,
            "rounds_to_target": self.rounds_to_target,
            "diverged": self.diverged,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "SweepRow":
        return cls(
            num_clients=payload["num_clients"],
            final_accuracy_at_budget=payload["final_accuracy_at_budget"],
            rounds_to_target=payload["rounds_to_target"],
            diverged=payload["diverged"],
        )


@dataclass(frozen=True)
class SweepReport:
    """All sweep rows plus the reference quantities they were scored
    against."""

    rows: tuple
    baseline_accuracy: float
    target_accuracy: float
    random_baseline: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "rows": [row.to_json_dict() for row in self.rows],
                "baseline_accuracy": self.baseline_accuracy,
                "target_accuracy": self.target_accuracy,
                "random_baseline": self.random_baseline,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "SweepReport":
        payload = json.loads(text)
        return cls(
            rows=tuple(SweepRow.from_json_dict(row) for row in payload["rows"]),
            baseline_accuracy=payload["baseline_accuracy"],
            target_accuracy=payload["target_accuracy"],
            random_baseline=payload["random_baseline"],
        )


def random_baseline(num_classes: int) -> float:
    """Accuracy of uniform guessing on a balanced task."""
    if num_classes < 2:
        raise ConfigError("num_classes must be >= 2")
    return 1.0 / num_classes


def rounds_to_target(curve, target: float) -> int | None:
    """First 1-based round whose test accuracy reaches ``target``.

    Accepts RoundRecord sequences or bare accuracy floats (implicitly rounds
    1..len). Returns None when the curve never reaches the target.
    """
    for position, point in enumerate(curve, start=1):
        if isinstance(point, RoundRecord):
            round_index, value = point.round_index, point.test_accuracy
        else:
            round_index, value = position, float(point)
        if value >= target:
            return round_index
    return None


def run_baseline(
    spec: ModelSpec,
    train_set: Dataset,
    test_set: Dataset,
    base_config: FedConfig,
    plan: ExperimentPlan,
    *,
    threads: int = 1,
) -> TrainingResult:
    """Single-client run for the full threshold budget. Its accuracy at
    ``plan.baseline_rounds`` is the sweep's reference point."""
    config = _with(base_config, num_clients=1, rounds=plan.threshold_rounds)
    if plan.baseline_rounds % config.eval_every != 0:
        raise ConfigError("baseline_rounds must be a multiple of eval_every")
    return run_training(spec, train_set, test_set, config, threads=threads)


def client_sweep(
    spec: ModelSpec,
    train_set: Dataset,
    test_set: Dataset,
    base_config: FedConfig,
    plan: ExperimentPlan,
    *,
    threads: int = 1,
) -> tuple[SweepReport, dict]:
    """Run every client count in the plan and score against the K=1 baseline.

    Returns the report plus a dict mapping K to each run's TrainingResult
    (curves for plotting). Divergence in a non-baseline run is recorded in its
    row; divergence of the baseline itself is an error because nothing can be
    scored without the reference accuracy.
    """
    baseline = run_baseline(spec, train_set, test_set, base_config, plan, threads=threads)
    by_round = {record.round_index: record for record in baseline.records}
    if plan.baseline_rounds not in by_round:
        raise ConfigError("baseline run produced no record at baseline_rounds")
    baseline_accuracy = by_round[plan.baseline_rounds].test_accuracy
    target = plan.target_fraction * baseline_accuracy

    rows = []
    results = {}
    for count in plan.client_counts:
        if count == 1:
            result, diverged = baseline, False
        else:
            config = _with(base_config, num_clients=count, rounds=plan.threshold_rounds)
            try:
                result = run_training(spec, train_set, test_set, config, threads=threads)
                diverged = False
            except TrainingDiverged as failure:
                result = TrainingResult(failure.records, None)
                diverged = True
        results[count] = result
        at_budget = next(
            (r.test_accuracy for r in result.records if r.round_index == plan.baseline_rounds), None
        )
        rows.append(
            SweepRow(
                num_clients=count,
                final_accuracy_at_budget=at_budget,
                rounds_to_target=rounds_to_target(result.records, target),
                diverged=diverged,
            )
        )
    report = SweepReport(
        rows=tuple(rows),
        baseline_accuracy=baseline_accuracy,
        target_accuracy=target,
        random_baseline=random_baseline(test_set.num_classes),
    )
    return report, results


def _with(config: FedConfig, **overrides) -> FedConfig:
    fields = {
        "num_clients": config.num_clients,
        "learning_rate": config.learning_rate,
        "rounds": config.rounds,
        "seed": config.seed,
        "local_epochs": config.local_epochs,
        "batch_size": config.batch_size,
        "eval_every": config.eval_every,
    }
    fields.update(overrides)
    return FedConfig(**fields)
