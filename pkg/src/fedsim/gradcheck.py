"""Central finite-difference verification of model gradients.

The numeric side never touches the reverse-mode engine's backward pass: it
only evaluates the scalar loss at shifted parameter vectors, so agreement is
evidence that the analytic gradient is right.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .models import (
    SOFTMAX_REGRESSION,
    Batch,
    FeatureVector,
    ModelSpec,
    gradient,
    init_params,
    loss,
)
from .rng import SplitMix64

DEFAULT_STEP = 1e-4
DEFAULT_REL_TOL = 1e-3
DEFAULT_ABS_TOL = 1e-6


@dataclass(frozen=True)
class GradientCheckResult:
    max_rel_error: float
    worst_index: int
    checked: int
    passed: bool


def finite_difference(loss_fn, params: np.ndarray, step: float = DEFAULT_STEP) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function, coordinate
    by coordinate."""
    numeric = np.empty_like(params)
    shifted = params.copy()
    for i in range(params.size):
        original = shifted[i]
        shifted[i] = original + step
        upper = loss_fn(shifted)
        shifted[i] = original - step
        lower = loss_fn(shifted)
        shifted[i] = original
        numeric[i] = (upper - lower) / (2.0 * step)
    return numeric


def relative_errors(
    analytic: np.ndarray,
    numeric: np.ndarray,
    rel_tol: float = DEFAULT_REL_TOL,
    abs_tol: float = DEFAULT_ABS_TOL,
) -> np.ndarray:
    """Per-coordinate |a - n| / max(|a|, |n|, abs_tol/rel_tol).

    The floor makes max error <= rel_tol equivalent to the pass rule
    "relative error within rel_tol, or absolute error within abs_tol for
    near-zero coordinates".
    """
    floor = abs_tol / rel_tol
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def check_gradient(
    spec: ModelSpec,
    params: np.ndarray,
    batch: Batch,
    step: float = DEFAULT_STEP,
    rel_tol: float = DEFAULT_REL_TOL,
    abs_tol: float = DEFAULT_ABS_TOL,
    corrupt: bool = False,
) -> GradientCheckResult:
    """Compare the analytic gradient to central finite differences.

    ``corrupt`` deliberately perturbs one analytic coordinate; it exists as a
    negative control so the checker itself can be shown to catch bad
    gradients.
    """
    analytic = gradient(spec, params, batch)
    if corrupt:
        analytic = analytic.copy()
        analytic[0] += 1.0 + abs(analytic[0])
    numeric = finite_difference(lambda p: loss(spec, p, batch), params, step)
    errors = relative_errors(analytic, numeric, rel_tol, abs_tol)
    worst = int(np.argmax(errors))
    max_err = float(errors[worst])
    return GradientCheckResult(max_err, worst, params.size, max_err <= rel_tol)


def random_params(spec: ModelSpec, seed: int, scale: float = 0.5) -> np.ndarray:
    """Seeded initialization plus uniform noise, for exercising gradients
    away from the (possibly all-zero) starting point."""
    rng = SplitMix64(seed)
    return init_params(spec, seed) + rng.uniform(-scale, scale, spec.param_count)


def random_batch(spec: ModelSpec, seed: int, size: int = 3) -> Batch:
    """Seeded random batch matching the model's input kind."""
    if size < 1:
        raise ConfigError("batch size must be >= 1")
    rng = SplitMix64(seed)
    examples = []
    for _ in range(size):
        label = rng.below(spec.num_classes)
        if spec.kind == SOFTMAX_REGRESSION:
            active = rng.below(min(6, spec.vocab_size)) + 1
            indices = np.sort(rng.permutation(spec.vocab_size)[:active])
            weights = rng.uniform(0.1, 1.0, active)
            weights /= np.linalg.norm(weights)
            examples.append((FeatureVector(indices, weights, spec.vocab_size), label))
        else:
            length = rng.below(min(8, spec.max_seq_len)) + 1
            ids = np.asarray([rng.below(spec.vocab_size) for _ in range(length)], dtype=np.int64)
            examples.append((ids, label))
    return Batch(tuple(examples))
