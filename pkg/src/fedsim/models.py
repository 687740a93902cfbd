"""Desk-scale differentiable text classifiers.

Two model kinds share one parameter-vector interface:

* ``softmax-regression``: hashed bag-of-n-grams features into a linear
  softmax layer.
* ``tiny-transformer``: token/position embeddings, pre-norm encoder blocks
  (multi-head self-attention + GELU feed-forward), a final layer norm,
  mean-pooling over positions, and a linear classifier head.

Parameters live in one flat float64 vector whose layout is the concatenation
of the tensors returned by ``ModelSpec.param_shapes`` in order; the parameter
dimension is the sum of the products of those shapes. Gradients come from the
reverse-mode engine in ``autodiff`` and are checked against central finite
differences in ``gradcheck``.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError
from .rng import SplitMix64

SOFTMAX_REGRESSION = "softmax-regression"
TINY_TRANSFORMER = "tiny-transformer"
MODEL_KINDS = (SOFTMAX_REGRESSION, TINY_TRANSFORMER)

_LAYER_NORM_EPS = 1e-5

# Init rules for layout entries.
_ZERO = "zero"
_ONE = "one"
_FAN_IN = "uniform-fan-in"  # U(-a, a), a = 1/sqrt(first dim)
_EMBED = "uniform-embed"  # U(-a, a), a = 1/sqrt(embed_dim)


@dataclass(frozen=True)
class ModelSpec:
    """Shape of a classifier; the parameter dimension is a pure function of it.

    ``vocab_size`` is the hashed token-id space for both kinds. Transformer
    fields are ignored for softmax regression except ``max_seq_len`` and
    ``ngram_max``, which bound the featurizer.
    """

    kind: str
    num_classes: int
    vocab_size: int
    ngram_max: int = 1
    embed_dim: int = 16
    num_layers: int = 1
    num_heads: int = 2
    ff_dim: int = 32
    max_seq_len: int = 128

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must be >= 2")
        if self.ngram_max not in (1, 2):
            raise ConfigError("ngram_max must be 1 or 2")
        if self.max_seq_len < 1:
            raise ConfigError("max_seq_len must be >= 1")
        if self.kind == TINY_TRANSFORMER:
            if min(self.embed_dim, self.num_layers, self.num_heads, self.ff_dim) < 1:
                raise ConfigError("transformer dimensions must be positive")
            if self.embed_dim % self.num_heads != 0:
                raise ConfigError("embed_dim must be divisible by num_heads")

    def _layout(self) -> list[tuple[str, tuple[int, ...], str]]:
        if self.kind == SOFTMAX_REGRESSION:
            return [
                ("weights", (self.vocab_size, self.num_classes), _ZERO),
                ("bias", (self.num_classes,), _ZERO),
            ]
        d, f = self.embed_dim, self.ff_dim
        entries = [
            ("token_embedding", (self.vocab_size, d), _EMBED),
            ("position_embedding", (self.max_seq_len, d), _EMBED),
        ]
        for i in range(self.num_layers):
            p = f"layer{i}."
            entries += [
                (p + "attn_norm.gain", (d,), _ONE),
                (p + "attn_norm.bias", (d,), _ZERO),
                (p + "attn.query.weight", (d, d), _FAN_IN),
                (p + "attn.query.bias", (d,), _ZERO),
                (p + "attn.key.weight", (d, d), _FAN_IN),
                (p + "attn.key.bias", (d,), _ZERO),
                (p + "attn.value.weight", (d, d), _FAN_IN),
                (p + "attn.value.bias", (d,), _ZERO),
                (p + "attn.out.weight", (d, d), _FAN_IN),
                (p + "attn.out.bias", (d,), _ZERO),
                (p + "ff_norm.gain", (d,), _ONE),
                (p + "ff_norm.bias", (d,), _ZERO),
                (p + "ff.expand.weight", (d, f), _FAN_IN),
                (p + "ff.expand.bias", (f,), _ZERO),
                (p + "ff.project.weight", (f, d), _FAN_IN),
                (p + "ff.project.bias", (d,), _ZERO),
            ]
        entries += [
            ("final_norm.gain", (d,), _ONE),
            ("final_norm.bias", (d,), _ZERO),
            ("head.weight", (d, self.num_classes), _FAN_IN),
            ("head.bias", (self.num_classes,), _ZERO),
        ]
        return entries

    def param_shapes(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        """Named tensor shapes, in flat-vector layout order."""
        return tuple((name, shape) for name, shape, _ in self._layout())

    @property
    def param_count(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.param_shapes())


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Sparse hashed bag-of-n-grams features, L2-normalized counts."""

    indices: np.ndarray
    weights: np.ndarray
    vocab_size: int

    def __post_init__(self):
        if len(self.indices) != len(self.weights):
            raise ConfigError("indices and weights must have equal length")
        if len(self.indices) > 0:
            if np.any(np.diff(self.indices) <= 0):
                raise ConfigError("feature indices must be strictly increasing")
            if self.indices[0] < 0 or self.indices[-1] >= self.vocab_size:
                raise ConfigError("feature index out of range")

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True, eq=False)
class Batch:
    """Non-empty sequence of (features, label) pairs."""

    examples: tuple

    def __post_init__(self):
        if len(self.examples) == 0:
            raise ConfigError("batch must not be empty")

    def __len__(self) -> int:
        return len(self.examples)


_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(text: str) -> int:
    """FNV-1a 64-bit hash of the UTF-8 encoding of ``text``."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


def hash_features(text: str, vocab_size: int, ngram_max: int = 1, max_tokens: int = 128) -> FeatureVector:
    """Hash word n-grams of ``text`` into [0, vocab_size).

    Consumes at most ``max_tokens`` tokens. Bucket index is FNV-1a 64 of the
    n-gram (bigrams joined with a single space) modulo ``vocab_size``; weights
    are bucket counts divided by the Euclidean norm of the count vector. Empty
    token streams produce the empty feature vector.
    """
    if vocab_size < 2:
        raise ConfigError("vocab_size must be >= 2")
    if ngram_max not in (1, 2):
        raise ConfigError("ngram_max must be 1 or 2")
    tokens = tokenize(text)[:max_tokens]
    grams = list(tokens)
    if ngram_max == 2:
        grams += [a + " " + b for a, b in zip(tokens, tokens[1:])]
    counts = Counter(fnv1a64(g) % vocab_size for g in grams)
    if not counts:
        empty = np.empty(0)
        return FeatureVector(empty.astype(np.int64), empty, vocab_size)
    indices = np.asarray(sorted(counts), dtype=np.int64)
    weights = np.asarray([float(counts[i]) for i in indices])
    weights /= np.linalg.norm(weights)
    return FeatureVector(indices, weights, vocab_size)


def token_ids(text: str, vocab_size: int, max_tokens: int = 128) -> np.ndarray:
    """Hash each token to an id in [0, vocab_size), keeping sequence order."""
    tokens = tokenize(text)[:max_tokens]
    return np.asarray([fnv1a64(t) % vocab_size for t in tokens], dtype=np.int64)


def featurize_dataset(spec: ModelSpec, dataset) -> tuple:
    """Turn a Dataset's records into model inputs, preserving record order."""
    if spec.kind == SOFTMAX_REGRESSION:
        return tuple(
            (hash_features(text, spec.vocab_size, spec.ngram_max, spec.max_seq_len), label)
            for label, text in dataset.records
        )
    return tuple(
        (token_ids(text, spec.vocab_size, spec.max_seq_len), label)
        for label, text in dataset.records
    )


def init_params(spec: ModelSpec, seed: int) -> np.ndarray:
    """Deterministic initial parameter vector for (spec, seed).

    Softmax regression starts at zero. Transformer weight matrices draw from
    U(-a, a) with a = 1/sqrt(fan_in) (embedding tables use fan_in =
    embed_dim), biases start at zero, and norm gains at one; draws consume one
    SplitMix64 stream seeded with ``seed``, in layout order.
    """
    rng = SplitMix64(seed)
    parts = []
    for _, shape, rule in spec._layout():
        if rule == _ZERO:
            parts.append(np.zeros(shape))
        elif rule == _ONE:
            parts.append(np.ones(shape))
        else:
            fan_in = spec.embed_dim if rule == _EMBED else shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            parts.append(rng.uniform(-bound, bound, shape))
    return np.concatenate([p.reshape(-1) for p in parts])


def _check_params(spec: ModelSpec, params: np.ndarray) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.shape[0] != spec.param_count:
        raise ConfigError(
            f"parameter vector has dimension {params.size}, expected {spec.param_count}"
        )
    return params


def _param_tensors(spec: ModelSpec, params: np.ndarray, requires_grad: bool) -> dict:
    tensors = {}
    offset = 0
    for name, shape in spec.param_shapes():
        size = int(np.prod(shape))
        view = params[offset : offset + size].reshape(shape)
        tensor = ad.Tensor.__new__(ad.Tensor)
        tensor.data = view
        tensor.grad = None
        tensor.requires_grad = requires_grad
        tensor._parents = ()
        tensor._backward = None
        tensors[name] = tensor
        offset += size
    return tensors


def _flatten_grads(spec: ModelSpec, tensors: dict) -> np.ndarray:
    out = np.empty(spec.param_count)
    offset = 0
    for name, shape in spec.param_shapes():
        size = int(np.prod(shape))
        grad = tensors[name].grad
        if grad is None:
            out[offset : offset + size] = 0.0
        else:
            out[offset : offset + size] = grad.reshape(-1)
        offset += size
    return out


def _check_batch(spec: ModelSpec, batch: Batch) -> None:
    for features, label in batch.examples:
        if not 0 <= label < spec.num_classes:
            raise ConfigError(f"label {label} out of range for {spec.num_classes} classes")
        if spec.kind == SOFTMAX_REGRESSION:
            if not isinstance(features, FeatureVector):
                raise ConfigError("softmax-regression expects FeatureVector inputs")
            if features.vocab_size != spec.vocab_size:
                raise ConfigError("feature vocab_size does not match model spec")


def _dense_features(spec: ModelSpec, features_seq) -> np.ndarray:
    dense = np.zeros((len(features_seq), spec.vocab_size))
    for row, fv in enumerate(features_seq):
        if len(fv):
            dense[row, fv.indices] = fv.weights
    return dense


def _bow_logits(spec: ModelSpec, tensors: dict, features_seq) -> ad.Tensor:
    x = ad.constant(_dense_features(spec, features_seq))
    return x @ tensors["weights"] + tensors["bias"]


def _layer_norm(x: ad.Tensor, gain: ad.Tensor, bias: ad.Tensor) -> ad.Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * ((var + _LAYER_NORM_EPS) ** -0.5) * gain + bias


def _softmax_last(x: ad.Tensor) -> ad.Tensor:
    # Shift by a detached max: value-invariant, prevents exp overflow.
    shifted = x - ad.constant(x.data.max(axis=-1, keepdims=True))
    e = ad.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x: ad.Tensor, num_heads: int, head_dim: int) -> ad.Tensor:
    t = x.shape[0]
    return x.reshape((t, num_heads, head_dim)).transpose((1, 0, 2))


def _transformer_logits(spec: ModelSpec, tensors: dict, ids: np.ndarray) -> ad.Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    t = len(ids)
    if t > spec.max_seq_len:
        raise ConfigError(f"sequence of length {t} exceeds max_seq_len {spec.max_seq_len}")
    if t == 0:
        # Empty text: pooled representation is the zero vector.
        pooled = ad.constant(np.zeros((1, spec.embed_dim)))
        return pooled @ tensors["head.weight"] + tensors["head.bias"]
    if ids.min() < 0 or ids.max() >= spec.vocab_size:
        raise ConfigError("token id out of range")
    head_dim = spec.embed_dim // spec.num_heads
    scale = 1.0 / np.sqrt(head_dim)
    x = ad.take_rows(tensors["token_embedding"], ids) + ad.take_rows(
        tensors["position_embedding"], np.arange(t)
    )
    for i in range(spec.num_layers):
        p = f"layer{i}."
        h = _layer_norm(x, tensors[p + "attn_norm.gain"], tensors[p + "attn_norm.bias"])
        q = _split_heads(h @ tensors[p + "attn.query.weight"] + tensors[p + "attn.query.bias"], spec.num_heads, head_dim)
        k = _split_heads(h @ tensors[p + "attn.key.weight"] + tensors[p + "attn.key.bias"], spec.num_heads, head_dim)
        v = _split_heads(h @ tensors[p + "attn.value.weight"] + tensors[p + "attn.value.bias"], spec.num_heads, head_dim)
        scores = (q @ k.transpose((0, 2, 1))) * scale
        context = _softmax_last(scores) @ v
        merged = context.transpose((1, 0, 2)).reshape((t, spec.embed_dim))
        x = x + merged @ tensors[p + "attn.out.weight"] + tensors[p + "attn.out.bias"]
        h = _layer_norm(x, tensors[p + "ff_norm.gain"], tensors[p + "ff_norm.bias"])
        expanded = ad.gelu(h @ tensors[p + "ff.expand.weight"] + tensors[p + "ff.expand.bias"])
        x = x + expanded @ tensors[p + "ff.project.weight"] + tensors[p + "ff.project.bias"]
    x = _layer_norm(x, tensors["final_norm.gain"], tensors["final_norm.bias"])
    pooled = x.mean(axis=0, keepdims=True)
    return pooled @ tensors["head.weight"] + tensors["head.bias"]


def _cross_entropy(logits: ad.Tensor, labels: np.ndarray, num_classes: int) -> ad.Tensor:
    """Mean over rows of -log softmax probability of the true class."""
    one_hot = np.zeros(logits.shape)
    one_hot[np.arange(len(labels)), labels] = 1.0
    shift = ad.constant(logits.data.max(axis=-1, keepdims=True))
    log_sum = ad.log(ad.exp(logits - shift).sum(axis=-1, keepdims=True)) + shift
    picked = (logits * ad.constant(one_hot)).sum(axis=-1, keepdims=True)
    return (log_sum - picked).mean()


def _batch_loss(spec: ModelSpec, tensors: dict, batch: Batch) -> ad.Tensor:
    labels = np.asarray([label for _, label in batch.examples], dtype=np.int64)
    if spec.kind == SOFTMAX_REGRESSION:
        logits = _bow_logits(spec, tensors, [f for f, _ in batch.examples])
        return _cross_entropy(logits, labels, spec.num_classes)
    total = None
    for (ids, _), label in zip(batch.examples, labels):
        logits = _transformer_logits(spec, tensors, ids)
        item = _cross_entropy(logits, np.asarray([label]), spec.num_classes)
        total = item if total is None else total + item
    return total * (1.0 / len(batch))


def loss(spec: ModelSpec, params: np.ndarray, batch: Batch) -> float:
    """Mean cross-entropy of the batch under ``params``."""
    params = _check_params(spec, params)
    _check_batch(spec, batch)
    tensors = _param_tensors(spec, params, requires_grad=False)
    return float(_batch_loss(spec, tensors, batch).data)


def loss_and_gradient(spec: ModelSpec, params: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
    """Batch loss together with its exact gradient (one forward/backward pass)."""
    params = _check_params(spec, params)
    _check_batch(spec, batch)
    tensors = _param_tensors(spec, params, requires_grad=True)
    value = _batch_loss(spec, tensors, batch)
    value.backward()
    return float(value.data), _flatten_grads(spec, tensors)


def gradient(spec: ModelSpec, params: np.ndarray, batch: Batch) -> np.ndarray:
    """Exact gradient of ``loss`` with respect to ``params``."""
    return loss_and_gradient(spec, params, batch)[1]


def logits_matrix(spec: ModelSpec, params: np.ndarray, features_seq) -> np.ndarray:
    """Class logits for a sequence of featurized inputs (no gradients)."""
    params = _check_params(spec, params)
    tensors = _param_tensors(spec, params, requires_grad=False)
    if spec.kind == SOFTMAX_REGRESSION:
        return _bow_logits(spec, tensors, list(features_seq)).data
    rows = [_transformer_logits(spec, tensors, ids).data[0] for ids in features_seq]
    return np.asarray(rows)


def accuracy(spec: ModelSpec, params: np.ndarray, examples, chunk_size: int = 256) -> float:
    """Fraction of examples whose argmax class (ties to the lowest index)
    equals the label."""
    examples = list(examples)
    if not examples:
        raise ConfigError("accuracy requires a non-empty dataset")
    correct = 0
    for start in range(0, len(examples), chunk_size):
        chunk = examples[start : start + chunk_size]
        scores = logits_matrix(spec, params, [f for f, _ in chunk])
        predicted = np.argmax(scores, axis=1)  # first max = lowest class index
        labels = np.asarray([label for _, label in chunk])
        correct += int(np.sum(predicted == labels))
    return correct / len(examples)


def evaluate_loss(spec: ModelSpec, params: np.ndarray, examples, chunk_size: int = 256) -> float:
    """Mean cross-entropy over a whole example sequence, in fixed-size chunks."""
    examples = list(examples)
    if not examples:
        raise ConfigError("evaluate_loss requires a non-empty dataset")
    total = 0.0
    for start in range(0, len(examples), chunk_size):
        chunk = examples[start : start + chunk_size]
        total += loss(spec, params, Batch(tuple(chunk))) * len(chunk)
    return total / len(examples)
