"""Numerical substrate: synthetic data, non-IID partitioning, MLP training,
evaluation, FedAvg and cosine similarity.

The model is a one-hidden-layer tanh MLP with a softmax classifier. Its
parameters live in a single flat vector so that updates, aggregation and
similarity all operate on plain arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import prod
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import AggregationError, ConfigurationError, ContractViolation

SPLITS = ("train", "validation", "test")


@dataclass
class Dataset:
    features: np.ndarray  # (n_samples, n_features), float64
    labels: np.ndarray  # (n_samples,), int64
    split: np.ndarray  # (n_samples,), one of SPLITS
    n_classes: int

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        self.split = np.asarray(self.split)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ConfigurationError("labels outside [0, n_classes)", field="labels")

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def indices(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise ConfigurationError(f"unknown split {split!r}", field="split")
        return np.flatnonzero(self.split == split)

    def subset(self, split: str):
        idx = self.indices(split)
        return self.features[idx], self.labels[idx]


@dataclass
class ParamVector:
    values: np.ndarray
    layout: tuple  # ((name, shape), ...)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.layout = tuple((str(n), tuple(int(d) for d in s)) for n, s in self.layout)
        if self.values.ndim != 1 or self.values.size != sum(prod(s) for _, s in self.layout):
            raise ContractViolation("parameter vector length does not match layout")

    @property
    def dims(self) -> tuple[int, int, int]:
        """(n_in, n_hidden, n_out) of the MLP."""
        (_, (n_in, n_hidden)), _, (_, (_, n_out)), _ = self.layout
        return n_in, n_hidden, n_out

    @property
    def last_layer_range(self) -> tuple[int, int]:
        """Half-open index interval of the classifier weight and bias."""
        n_in, n_hidden, n_out = self.dims
        start = n_in * n_hidden + n_hidden
        return start, start + n_hidden * n_out + n_out

    def last_layer(self) -> np.ndarray:
        lo, hi = self.last_layer_range
        return self.values[lo:hi]

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def __len__(self):
        return self.values.size


@dataclass
class UpdateVector:
    values: np.ndarray
    round: int = 0

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)

    def __len__(self):
        return self.values.size


@dataclass
class ClientData:
    vehicle_id: int
    indices: np.ndarray
    dataset: Dataset = field(repr=False)

    def __len__(self):
        return self.indices.size

    def arrays(self):
        return self.dataset.features[self.indices], self.dataset.labels[self.indices]


# ---------------------------------------------------------------- data


def _stratified_split(labels, n_classes, rng, fractions=(0.70, 0.15, 0.15)):
    split = np.empty(labels.size, dtype=object)
    for c in range(n_classes):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        n = idx.size
        if n < 3:
            raise ConfigurationError(f"class {c} has {n} samples, need >= 3", field="n_samples")
        n_val = max(1, int(round(fractions[1] * n)))
        n_test = max(1, int(round(fractions[2] * n)))
        n_train = n - n_val - n_test
        split[idx[:n_train]] = "train"
        split[idx[n_train : n_train + n_val]] = "validation"
        split[idx[n_train + n_val :]] = "test"
    return split.astype(str)


def gen_dataset(n_classes, n_features, n_samples, class_separation, seed) -> Dataset:
    """Isotropic unit-variance Gaussian clusters, one per class.

    Centers are drawn at random and rescaled so the closest pair sits exactly
    ``class_separation`` apart. Classes are balanced and the 70/15/15 split is
    stratified by class.
    """
    if n_classes < 2:
        raise ConfigurationError("need at least 2 classes", field="n_classes")
    if n_features < 1:
        raise ConfigurationError("need at least 1 feature", field="n_features")
    if n_samples < 10 * n_classes:
        raise ConfigurationError("need n_samples >= 10 * n_classes", field="n_samples")
    if not class_separation > 0:
        raise ConfigurationError("must be positive", field="class_separation")

    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(n_classes, n_features))
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    min_dist = dist[np.triu_indices(n_classes, 1)].min()
    centers *= class_separation / min_dist

    counts = np.full(n_classes, n_samples // n_classes)
    counts[: n_samples % n_classes] += 1
    labels = np.repeat(np.arange(n_classes), counts)
    features = centers[labels] + rng.normal(size=(n_samples, n_features))
    split = _stratified_split(labels, n_classes, rng)
    return Dataset(features, labels, split, n_classes)


def load_dataset(path, seed, delimiter=",", n_classes=None) -> Dataset:
    """Read one sample per line, label in the last column, and split 70/15/15."""
    raw = np.loadtxt(path, delimiter=delimiter, ndmin=2)
    features, labels = raw[:, :-1], raw[:, -1].astype(np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    split = _stratified_split(labels, n_classes, np.random.default_rng(seed))
    return Dataset(features, labels, split, n_classes)


def partition_non_iid(dataset, n_clients, shards_per_client, seed, n_shards=None):
    """Label-skewed shard partition of the train split.

    The train split is sorted by label and cut into ``n_shards`` contiguous
    pieces (default ``n_clients * shards_per_client``); every client draws
    ``shards_per_client`` of them without replacement. A client sees at most
    ``shards_per_client`` classes whenever shard boundaries align with class
    boundaries.
    """
    if n_clients < 1 or shards_per_client < 1:
        raise ConfigurationError("need at least one client and one shard each", field="n_clients")
    train = dataset.indices("train")
    if n_shards is None:
        n_shards = n_clients * shards_per_client
    if n_clients * shards_per_client > n_shards:
        raise ConfigurationError(
            f"{n_clients} clients x {shards_per_client} shards exceeds {n_shards} shards",
            field="n_clients",
        )
    if n_shards > train.size:
        raise ConfigurationError("more shards than train samples", field="n_shards")
    order = train[np.argsort(dataset.labels[train], kind="stable")]
    shards = np.array_split(order, n_shards)
    rng = np.random.default_rng(seed)
    picks = rng.permutation(n_shards)[: n_clients * shards_per_client]
    clients = []
    for k in range(n_clients):
        mine = picks[k * shards_per_client : (k + 1) * shards_per_client]
        idx = np.sort(np.concatenate([shards[s] for s in mine]))
        clients.append(ClientData(k, idx, dataset))
    return clients


# ---------------------------------------------------------------- model


def mlp_layout(n_in, n_hidden, n_out):
    return (
        ("hidden.weight", (n_in, n_hidden)),
        ("hidden.bias", (n_hidden,)),
        ("out.weight", (n_hidden, n_out)),
        ("out.bias", (n_out,)),
    )


def init_model(layout, seed, scale=0.1) -> ParamVector:
    """Gaussian weights with std ``scale``, zero biases."""
    layout = tuple(layout or ())
    if not layout:
        raise ConfigurationError("empty layout", field="layout")
    if len(layout) != 4 or len(layout[0][1]) != 2 or len(layout[2][1]) != 2:
        raise ConfigurationError(
            "layout must be [hidden weight, hidden bias, out weight, out bias]", field="layout"
        )
    (_, (n_in, n_h)), (_, b1), (_, (n_h2, n_out)), (_, b2) = layout
    if tuple(b1) != (n_h,) or n_h2 != n_h or tuple(b2) != (n_out,):
        raise ConfigurationError("inconsistent layer shapes", field="layout")
    rng = np.random.default_rng(seed)
    w1 = rng.normal(0.0, scale, size=n_in * n_h)
    w2 = rng.normal(0.0, scale, size=n_h * n_out)
    values = np.concatenate([w1, np.zeros(n_h), w2, np.zeros(n_out)])
    return ParamVector(values, layout)


def local_train(params, data, lr, epochs, batch_size, seed):
    """Mini-batch SGD on softmax cross-entropy.

    Returns ``(new_params, update)`` with ``update = new - old``, or ``None``
    when the client holds no data (the caller records a missed round).
    """
    if data is None or len(data) == 0:
        return None
    if lr < 0:
        raise ConfigurationError("learning rate must be non-negative", field="lr")
    if epochs < 1 or batch_size < 1:
        raise ConfigurationError("epochs and batch_size must be >= 1", field="epochs")
    X, y = data.arrays()
    n = y.size
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(n) for _ in range(epochs)]).astype(np.int64)
    new = params.values.copy()
    if lr > 0:
        _, n_hidden, n_out = params.dims
        kernels.sgd_train(new, X, y, order, n_hidden, n_out, float(lr), int(batch_size))
    new_params = ParamVector(new, params.layout)
    return new_params, UpdateVector(new - params.values)


def predict(params, X):
    _, n_hidden, n_out = params.dims
    return kernels.predict(params.values, np.ascontiguousarray(X, dtype=np.float64), n_hidden, n_out)


def evaluate(params, dataset, split) -> float:
    X, y = dataset.subset(split)
    if y.size == 0:
        raise ConfigurationError(f"split {split!r} is empty", field="split")
    return float(np.mean(predict(params, X) == y))


# ---------------------------------------------------------------- aggregation


def fedavg(contributions):
    """Weighted entrywise mean of parameter or update vectors.

    Accepts ``(vector, weight)`` pairs where ``vector`` is a ParamVector,
    UpdateVector or array; the result has the type of the first vector.
    """
    contributions = list(contributions)
    if not contributions:
        raise AggregationError("no contributions to aggregate")
    vecs = [_values(v) for v, _ in contributions]
    weights = np.array([float(w) for _, w in contributions])
    if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
        raise ContractViolation("aggregation weights must be positive")
    size = vecs[0].size
    if any(v.size != size for v in vecs):
        raise ContractViolation("contributions differ in length")
    stack = np.stack(vecs)
    out = (weights / weights.sum()) @ stack
    # guard against round-off escaping the convex hull
    out = np.clip(out, stack.min(axis=0), stack.max(axis=0))
    first = contributions[0][0]
    if isinstance(first, ParamVector):
        return ParamVector(out, first.layout)
    if isinstance(first, UpdateVector):
        return UpdateVector(out, first.round)
    return out


def _values(v):
    if isinstance(v, (ParamVector, UpdateVector)):
        return v.values
    return np.ascontiguousarray(v, dtype=np.float64)


def cosine_similarity(a, b) -> Optional[float]:
    """Cosine of the angle between ``a`` and ``b``; ``None`` if either is zero."""
    a, b = _values(a), _values(b)
    if a.size != b.size:
        raise ContractViolation("cosine similarity of vectors with different lengths")
    ab, aa, bb = kernels.dot_norms(a, b)
    if aa == 0.0 or bb == 0.0:
        return None
    return float(min(1.0, max(-1.0, ab / (np.sqrt(aa) * np.sqrt(bb)))))


def layout_size(layout: Sequence) -> int:
    return sum(prod(s) for _, s in layout)
