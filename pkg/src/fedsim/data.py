"""Dataset ingestion, synthetic corpora, and client sharding.

CSV layout: UTF-8, comma-separated, double-quote quoting with doubled-quote
escapes, columns addressed by zero-based position, header row optional.
Sharding is an even i.i.d. split: a seeded shuffle of record indices cut into
contiguous runs whose sizes differ by at most one.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .rng import SplitMix64


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labeled text records; labels are integers in [0, num_classes)."""

    records: tuple  # of (label, text) pairs
    num_classes: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if not self.records:
            raise ConfigError("dataset must contain at least one record")
        for label, _ in self.records:
            if not 0 <= label < self.num_classes:
                raise ConfigError(f"label {label} out of range [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.records)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Dataset)
            and self.num_classes == other.num_classes
            and self.records == other.records
        )

    def class_counts(self) -> list[int]:
        counts = [0] * self.num_classes
        for label, _ in self.records:
            counts[label] += 1
        return counts


@dataclass(frozen=True, eq=False)
class Shard:
    """One client's slice of a dataset: unique record indices into the parent."""

    owner: int
    indices: np.ndarray

    def __post_init__(self):
        if len(np.unique(self.indices)) != len(self.indices):
            raise ConfigError("shard indices must be unique")

    @property
    def size(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class CsvSchema:
    """How to read a classification CSV: column positions, label base (AG
    News-style files are 1-based), declared class count, optional header."""

    label_column: int
    text_columns: tuple
    num_classes: int
    label_base: int = 0
    has_header: bool = False


@dataclass(frozen=True)
class SynthSpec:
    """Synthetic corpus: per-class token profiles mixing a shared background
    vocabulary with class-specific signal tokens."""

    num_classes: int
    samples: int
    vocab_size: int
    tokens_per_doc: int
    signal: float
    seed: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.samples < self.num_classes:
            raise ConfigError("samples must be >= num_classes")
        if self.vocab_size < 2 * self.num_classes:
            raise ConfigError("vocab_size must be >= 2 * num_classes")
        if self.tokens_per_doc < 1:
            raise ConfigError("tokens_per_doc must be >= 1")
        if not 0.0 < self.signal <= 1.0:
            raise ConfigError("signal must be in (0, 1]")


def load_csv(path, schema: CsvSchema) -> Dataset:
    """Read a labeled text dataset, preserving file order.

    Text columns are concatenated with a single space. Labels are shifted by
    ``label_base`` and must land in [0, num_classes). Any malformed row fails
    with its 1-based row number.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"dataset file not found: {path}")
    needed = max(schema.label_column, *schema.text_columns) + 1
    records = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        for row_number, row in enumerate(reader, start=1):
            if schema.has_header and row_number == 1:
                continue
            if len(row) < needed:
                raise ConfigError(
                    f"row {row_number}: expected at least {needed} columns, found {len(row)}"
                )
            try:
                raw_label = int(row[schema.label_column])
            except ValueError:
                raise ConfigError(
                    f"row {row_number}: label {row[schema.label_column]!r} is not an integer"
                ) from None
            label = raw_label - schema.label_base
            if not 0 <= label < schema.num_classes:
                raise ConfigError(
                    f"row {row_number}: label {raw_label} out of range for "
                    f"{schema.num_classes} classes (base {schema.label_base})"
                )
            text = " ".join(row[c] for c in schema.text_columns)
            records.append((label, text))
    return Dataset(tuple(records), schema.num_classes)


def save_csv(dataset: Dataset, path, label_base: int = 0) -> None:
    """Write records as ``label,text`` rows (inverse of a two-column schema)."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        for label, text in dataset.records:
            writer.writerow([label + label_base, text])


def synth_generate(spec: SynthSpec) -> Dataset:
    """Deterministic synthetic corpus.

    Record i gets class i mod C, so classes are balanced within one sample.
    The vocabulary's lower half is shared background; the upper half is split
    into per-class signal chunks. Each document token is a signal token with
    probability ``signal``, else a background token. With signal 1.0 the
    classes are separable by a bag-of-words linear model.
    """
    rng = SplitMix64(spec.seed)
    background = spec.vocab_size // 2
    chunk = (spec.vocab_size - background) // spec.num_classes
    records = []
    for i in range(spec.samples):
        label = i % spec.num_classes
        start = background + label * chunk
        tokens = []
        for _ in range(spec.tokens_per_doc):
            if rng.random() < spec.signal:
                tokens.append(start + rng.below(chunk))
            else:
                tokens.append(rng.below(background))
        records.append((label, " ".join(f"w{t}" for t in tokens)))
    return Dataset(tuple(records), spec.num_classes)


def partition_iid(dataset: Dataset, num_clients: int, seed: int) -> list[Shard]:
    """Evenly partition record indices into ``num_clients`` i.i.d. shards.

    A seeded Fisher-Yates shuffle of 0..n-1 is split contiguously; the first
    n mod K shards take one extra record. Deterministic in (n, K, seed).
    """
    n = len(dataset)
    if num_clients < 1:
        raise ConfigError("num_clients must be >= 1")
    if num_clients > n:
        raise ConfigError(f"cannot split {n} records across {num_clients} clients")
    order = SplitMix64(seed).permutation(n)
    base, extra = divmod(n, num_clients)
    shards = []
    offset = 0
    for k in range(num_clients):
        size = base + (1 if k < extra else 0)
        shards.append(Shard(owner=k, indices=order[offset : offset + size]))
        offset += size
    return shards


def split_train_test(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded disjoint split; first part holds ``fraction`` of the records
    (rounded half-up)."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError("split fraction must be strictly between 0 and 1")
    n = len(dataset)
    order = SplitMix64(seed).permutation(n)
    cut = int(fraction * n + 0.5)
    first = tuple(dataset.records[i] for i in order[:cut])
    second = tuple(dataset.records[i] for i in order[cut:])
    return (
        Dataset(first, dataset.num_classes),
        Dataset(second, dataset.num_classes),
    )
