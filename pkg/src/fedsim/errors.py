"""Exception hierarchy shared across the package.

ConfigError marks usage and configuration mistakes (CLI exit code 2);
everything else raised by the engine is a runtime failure (exit code 1).
"""

from __future__ import annotations


class FedsimError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(FedsimError):
    """Invalid configuration, arguments, or input data."""


class TrainingDiverged(FedsimError):
    """Model parameters went non-finite during training.

    Carries the 1-based round at which divergence was detected and the
    round records collected before it.
    """

    def __init__(self, round_index: int, records: tuple):
        super().__init__(f"parameters became non-finite in round {round_index}")
        self.round_index = round_index
        self.records = records
