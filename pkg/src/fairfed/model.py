"""Linear softmax classifier with hand-written gradients.

The same model class serves as the task classifier and as the per-client
group-likelihood model ``p(group | x)``.
"""
import struct
from dataclasses import dataclass

import numpy as np

from .data import GroupedDataset
from .errors import ConfigurationError, ContractError, ShapeError
from .fairness import normalize_weights

_CHECKPOINT_MAGIC = b"FFMP"


@dataclass(frozen=True, eq=False)
class ModelParams:
    weights: np.ndarray  # (num_outputs, feature_dim)
    bias: np.ndarray  # (num_outputs,)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise ShapeError(f"weights {w.shape} and bias {b.shape} are inconsistent")
        w.flags.writeable = False
        b.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @classmethod
    def zeros(cls, num_outputs, feature_dim):
        return cls(np.zeros((num_outputs, feature_dim)), np.zeros(num_outputs))

    @classmethod
    def random(cls, num_outputs, feature_dim, rng, scale=0.01):
        return cls(scale * rng.standard_normal((num_outputs, feature_dim)), np.zeros(num_outputs))

    @property
    def num_outputs(self):
        return self.weights.shape[0]

    @property
    def feature_dim(self):
        return self.weights.shape[1]

    @property
    def size(self):
        return self.weights.size + self.bias.size

    def flat(self):
        return np.concatenate([self.weights.ravel(), self.bias])

    @classmethod
    def from_flat(cls, vector, num_outputs, feature_dim):
        vector = np.asarray(vector, dtype=np.float64)
        split = num_outputs * feature_dim
        return cls(vector[:split].reshape(num_outputs, feature_dim), vector[split:])

    def __add__(self, other):
        return ModelParams(self.weights + other.weights, self.bias + other.bias)

    def __sub__(self, other):
        return ModelParams(self.weights - other.weights, self.bias - other.bias)

    def __mul__(self, scalar):
        return ModelParams(self.weights * scalar, self.bias * scalar)

    __rmul__ = __mul__

    def is_finite(self):
        return bool(np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias)))

    def to_bytes(self):
        """Checkpoint layout: ``b"FFMP"``, two little-endian uint32
        (num_outputs, feature_dim), then the float64 LE weights (row-major)
        followed by the bias."""
        header = _CHECKPOINT_MAGIC + struct.pack("<II", self.num_outputs, self.feature_dim)
        return header + self.flat().astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob):
        if blob[:4] != _CHECKPOINT_MAGIC or len(blob) < 12:
            raise ContractError("not a model checkpoint")
        k, d = struct.unpack("<II", blob[4:12])
        values = np.frombuffer(blob, dtype="<f8", offset=12)
        if values.size != k * d + k:
            raise ContractError(f"checkpoint payload has {values.size} values, expected {k * d + k}")
        return cls.from_flat(values.astype(np.float64), k, d)


@dataclass(frozen=True, eq=False)
class GroupLossVector:
    """Unweighted per-group risk plus the sample count behind each entry.

    Groups absent from the evaluated batch have count 0 and risk 0.
    """

    per_group: np.ndarray
    counts: np.ndarray


def _check_features(params, features):
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != params.feature_dim:
        raise ShapeError(f"expected {params.feature_dim} features, got {x.shape[-1]}")
    return x


def _logits(params, x):
    return x @ params.weights.T + params.bias


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params, features):
    """``softmax(W x + b)`` for one feature vector or a matrix of rows."""
    x = _check_features(params, features)
    return _softmax(_logits(params, x))


def predict(params, features):
    """Argmax class; ties go to the lowest index."""
    return np.argmax(_logits(params, _check_features(params, features)), axis=-1)


def cross_entropy(params, features, labels):
    """Per-sample cross-entropy, computed stably through log-sum-exp."""
    x = _check_features(params, features)
    z = _logits(params, np.atleast_2d(x))
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    labels = np.asarray(labels, dtype=np.int64)
    return lse - z[np.arange(z.shape[0]), labels]


def _group_coefficients(groups, group_weights):
    """Per-sample coefficient ``w_g / n_g`` turning a weighted sum of group
    means into one weighted sum over samples."""
    group_weights = np.asarray(group_weights, dtype=np.float64)
    groups = np.asarray(groups, dtype=np.int64)
    if groups.size and groups.max() >= group_weights.size:
        missing = sorted(set(groups[groups >= group_weights.size].tolist()))
        raise ContractError(f"no weight supplied for group(s) {missing}")
    counts = np.bincount(groups, minlength=group_weights.size)
    return group_weights[groups] / counts[groups], counts


def group_losses(params, features, labels, groups, num_groups, mode="mean"):
    """Per-group empirical risk of ``params``.

    ``mode="mean"`` divides each group's summed loss by the group's size;
    ``mode="sum_over_groups"`` divides it by the number of groups instead.
    """
    ce = cross_entropy(params, features, labels)
    groups = np.asarray(groups, dtype=np.int64)
    counts = np.bincount(groups, minlength=num_groups)
    sums = np.bincount(groups, weights=ce, minlength=num_groups)
    if mode == "mean":
        per_group = np.divide(sums, counts, out=np.zeros(num_groups), where=counts > 0)
    elif mode == "sum_over_groups":
        per_group = sums / num_groups
    else:
        raise ConfigurationError(f"unknown risk mode {mode!r}")
    return GroupLossVector(per_group, counts)


def weighted_group_loss(params, features, labels, groups, group_weights, l1_coeff=0.0):
    """``sum_j w_j * mean_CE_j + l1_coeff * mean(|theta|)``.

    Returns the scalar loss and the unweighted per-group means. Groups with no
    sample in the batch contribute nothing.
    """
    if l1_coeff < 0:
        raise ContractError(f"l1_coeff must be >= 0, got {l1_coeff}")
    coef, counts = _group_coefficients(groups, group_weights)
    ce = cross_entropy(params, features, labels)
    k = np.asarray(group_weights).size
    sums = np.bincount(np.asarray(groups, dtype=np.int64), weights=ce, minlength=k)
    means = np.divide(sums, counts, out=np.zeros(k), where=counts > 0)
    loss = float(coef @ ce)
    if l1_coeff:
        loss += l1_coeff * float(np.abs(params.flat()).mean())
    return loss, GroupLossVector(means, counts)


def _data_gradient(params, x, labels, coef):
    p = _softmax(_logits(params, x))
    p[np.arange(x.shape[0]), labels] -= 1.0
    p *= coef[:, None]
    return p.T @ x, p.sum(axis=0)


def _l1_gradient(params, l1_coeff):
    m = params.size
    return l1_coeff * np.sign(params.weights) / m, l1_coeff * np.sign(params.bias) / m


def gradient(params, features, labels, groups, group_weights, l1_coeff=0.0):
    """Exact gradient of :func:`weighted_group_loss` (sign(0) = 0 for L1)."""
    if l1_coeff < 0:
        raise ContractError(f"l1_coeff must be >= 0, got {l1_coeff}")
    x = np.atleast_2d(_check_features(params, features))
    coef, _ = _group_coefficients(groups, group_weights)
    gw, gb = _data_gradient(params, x, np.asarray(labels, dtype=np.int64), coef)
    if l1_coeff:
        lw, lb = _l1_gradient(params, l1_coeff)
        gw, gb = gw + lw, gb + lb
    return ModelParams(gw, gb)


def sgd_epoch(params, data, weights, lr, batch_size, l1_coeff, rng):
    """One shuffled pass of mini-batch SGD over ``data``.

    ``weights`` is ``None`` for plain empirical risk (every sample counts
    ``1/batch``), or a vector of raw per-group importance weights. Raw weights
    are turned into group coefficients batch by batch with
    :func:`~fairfed.fairness.normalize_weights`, so the batch loss is
    ``sum_i w_i CE_i / sum_i w_i``. The last partial batch is kept.
    """
    if not lr >= 0:
        raise ContractError(f"lr must be >= 0, got {lr}")
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    if len(data) == 0:
        raise ContractError("cannot train on an empty shard")
    raw = None if weights is None else np.asarray(getattr(weights, "raw", weights), dtype=np.float64)

    w = np.array(params.weights)
    b = np.array(params.bias)
    order = rng.permutation(len(data))
    for start in range(0, order.size, batch_size):
        idx = order[start:start + batch_size]
        x, y, g = data.features[idx], data.labels[idx], data.groups[idx]
        current = ModelParams(w, b)
        if raw is None:
            coef = np.full(idx.size, 1.0 / idx.size)
        else:
            batch_weights = normalize_weights(raw[g], g, num_groups=raw.size)
            coef, _ = _group_coefficients(g, batch_weights)
        gw, gb = _data_gradient(current, x, y, coef)
        if l1_coeff:
            lw, lb = _l1_gradient(current, l1_coeff)
            gw, gb = gw + lw, gb + lb
        w -= lr * gw
        b -= lr * gb
    return ModelParams(w, b)


def fit_group_likelihood(data, epochs, lr, rng, batch_size=128):
    """Fit a ``num_groups``-way softmax model predicting group from features."""
    if data.num_groups < 2 or np.unique(data.groups).size < 2:
        raise ConfigurationError("group-likelihood model needs at least two groups in the shard")
    targets = GroupedDataset(data.features, data.groups, data.groups, data.num_groups, data.num_groups)
    params = ModelParams.zeros(data.num_groups, data.feature_dim)
    for _ in range(epochs):
        params = sgd_epoch(params, targets, None, lr, batch_size, 0.0, rng)
    return params


def accuracy(params, data):
    return float(np.mean(predict(params, data.features) == data.labels))
