"""Grouped datasets: synthetic generation, IDX loading, client partitioning
and per-client Gaussian feature noise."""
import csv
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, ContractError, FormatError
from .rng import stream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class Sample(NamedTuple):
    features: np.ndarray
    label: int
    group: int


@dataclass(frozen=True, eq=False)
class GroupedDataset:
    """Feature matrix with a class label and a group id per row.

    Every group in ``range(num_groups)`` must be represented.
    """

    features: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    num_classes: int
    num_groups: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        g = np.asarray(self.groups, dtype=np.int64)
        if x.ndim != 2:
            raise ContractError(f"features must be 2-D, got shape {x.shape}")
        n = x.shape[0]
        if y.shape != (n,) or g.shape != (n,):
            raise ContractError("features, labels and groups must have the same length")
        if n == 0:
            raise ConfigurationError("dataset is empty")
        if not np.all(np.isfinite(x)):
            raise ContractError("features must be finite")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ContractError(f"labels must lie in [0, {self.num_classes})")
        if g.min() < 0 or g.max() >= self.num_groups:
            raise ContractError(f"groups must lie in [0, {self.num_groups})")
        missing = np.flatnonzero(np.bincount(g, minlength=self.num_groups) == 0)
        if missing.size:
            raise ConfigurationError(f"group(s) {missing.tolist()} have no samples")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "groups", g)

    def __len__(self):
        return self.features.shape[0]

    @property
    def feature_dim(self):
        return self.features.shape[1]

    @property
    def samples(self):
        return [Sample(x, int(y), int(g)) for x, y, g in zip(self.features, self.labels, self.groups)]

    def group_counts(self):
        return np.bincount(self.groups, minlength=self.num_groups)

    def group_priors(self):
        counts = self.group_counts()
        return counts / counts.sum()

    def subset(self, index):
        index = np.asarray(index)
        return GroupedDataset(self.features[index], self.labels[index], self.groups[index],
                              self.num_classes, self.num_groups)

    def with_features(self, features):
        return GroupedDataset(features, self.labels, self.groups, self.num_classes, self.num_groups)


@dataclass(frozen=True, eq=False)
class ClientShard:
    client_id: int
    train: GroupedDataset
    test: GroupedDataset
    noise_variance: float = 0.0

    def __post_init__(self):
        a, b = self.train, self.test
        if (a.num_classes, a.num_groups, a.feature_dim) != (b.num_classes, b.num_groups, b.feature_dim):
            raise ContractError("train and test shards disagree on classes, groups or feature_dim")


def regroup(dataset, attribute, num_groups=None):
    """Return ``dataset`` with groups taken from an arbitrary per-sample attribute.

    ``attribute`` holds integer codes, one per sample. Groups default to class
    labels everywhere else in the package; this is the escape hatch.
    """
    attribute = np.asarray(attribute, dtype=np.int64)
    if num_groups is None:
        num_groups = int(attribute.max()) + 1
    return GroupedDataset(dataset.features, dataset.labels, attribute, dataset.num_classes, num_groups)


def _minmax(x):
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    span[span == 0] = 1.0
    return (x - lo) / span


def generate_synthetic(seed, num_groups=2, num_classes=None, per_group=100, feature_dim=4,
                       separation=3.0, spread=1.0):
    """Isotropic Gaussian cluster per group, min-max scaled to ``[0, 1]``.

    Cluster centres sit on mutually orthogonal directions so that every pair
    of centres is ``separation`` apart before scaling. ``spread`` is the
    per-group standard deviation (scalar or one value per group). The class
    label of a sample is its group index modulo ``num_classes``.
    """
    num_classes = num_groups if num_classes is None else num_classes
    if num_groups < 2:
        raise ConfigurationError(f"num_groups must be >= 2, got {num_groups}")
    if num_classes < 1:
        raise ConfigurationError(f"num_classes must be >= 1, got {num_classes}")
    if per_group < 2:
        raise ConfigurationError(f"per_group must be >= 2, got {per_group}")
    if feature_dim < 1:
        raise ConfigurationError(f"feature_dim must be >= 1, got {feature_dim}")
    if not separation > 0:
        raise ConfigurationError(f"separation must be > 0, got {separation}")
    spread = np.broadcast_to(np.asarray(spread, dtype=np.float64), (num_groups,))
    if np.any(spread < 0):
        raise ConfigurationError("spread must be non-negative")

    rng = stream(seed, "synthetic")
    basis = rng.standard_normal((feature_dim, max(feature_dim, num_groups)))
    if feature_dim >= num_groups:
        directions = np.linalg.qr(basis)[0][:, :num_groups].T
    else:
        # not enough room for orthogonal centres; fall back to random unit vectors
        directions = basis[:, :num_groups].T
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    centres = directions * (separation / np.sqrt(2.0))

    groups = np.repeat(np.arange(num_groups), per_group)
    noise = rng.standard_normal((groups.size, feature_dim))
    features = centres[groups] + spread[groups, None] * noise
    return GroupedDataset(_minmax(features), groups % num_classes, groups, num_classes, num_groups)


def split_holdout(dataset, per_group, seed):
    """Split off ``per_group`` samples of every group as a held-out set.

    Returns ``(rest, holdout)``.
    """
    rng = stream(seed, "holdout")
    held = []
    for g in range(dataset.num_groups):
        idx = np.flatnonzero(dataset.groups == g)
        if idx.size <= per_group:
            raise ConfigurationError(f"group {g} has {idx.size} samples, cannot hold out {per_group}")
        held.append(rng.permutation(idx)[:per_group])
    held = np.sort(np.concatenate(held))
    mask = np.ones(len(dataset), dtype=bool)
    mask[held] = False
    return dataset.subset(np.flatnonzero(mask)), dataset.subset(held)


def inject_gaussian_noise(features, variance, rng):
    """Return ``features + e`` with ``e ~ N(0, variance * I)``. Not clamped."""
    if variance < 0 or not np.isfinite(variance):
        raise ConfigurationError(f"noise variance must be finite and >= 0, got {variance}")
    features = np.asarray(features, dtype=np.float64)
    if variance == 0:
        return features.copy()
    return features + np.sqrt(variance) * rng.standard_normal(features.shape)


def partition(dataset, num_clients, noise_plan, seed, holdout=None):
    """Split ``dataset`` evenly over clients and corrupt each client's features.

    Every client receives ``n_g // num_clients`` samples of each group ``g``;
    remainders are dropped. Each client's test set is a copy of ``holdout``
    (``dataset`` itself when no holdout is given) carrying noise of the same
    variance as that client's training data, drawn from an independent stream.
    Noise is drawn once here and stays fixed for the run.
    """
    if num_clients < 2:
        raise ConfigurationError(f"num_clients must be >= 2, got {num_clients}")
    noise_plan = [float(v) for v in noise_plan]
    if len(noise_plan) != num_clients:
        raise ConfigurationError(
            f"noise_plan has {len(noise_plan)} entries but num_clients is {num_clients}")
    for v in noise_plan:
        if v < 0 or not np.isfinite(v):
            raise ConfigurationError(f"noise variance must be finite and >= 0, got {v}")
    holdout = dataset if holdout is None else holdout

    rng = stream(seed, "partition")
    per_client = [[] for _ in range(num_clients)]
    for g in range(dataset.num_groups):
        idx = rng.permutation(np.flatnonzero(dataset.groups == g))
        share = idx.size // num_clients
        if share == 0:
            raise ConfigurationError(
                f"group {g} has {idx.size} samples, fewer than num_clients={num_clients}")
        for k in range(num_clients):
            per_client[k].append(idx[k * share:(k + 1) * share])

    shards = []
    for k, (parts, var) in enumerate(zip(per_client, noise_plan)):
        train = dataset.subset(np.sort(np.concatenate(parts)))
        train = train.with_features(
            inject_gaussian_noise(train.features, var, stream(seed, "noise", "train", k)))
        test = holdout.with_features(
            inject_gaussian_noise(holdout.features, var, stream(seed, "noise", "test", k)))
        shards.append(ClientShard(k, train, test, var))
    return shards


# --- IDX container -------------------------------------------------------------

def _read_idx(path, expected_magic):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    magic, = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08X}, expected 0x{expected_magic:08X}", offset=0)
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated dimension header", offset=len(raw))
    dims = struct.unpack(">" + "I" * ndim, raw[4:header_end])
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header_end < size:
        raise FormatError(f"{path}: payload holds {len(raw) - header_end} bytes, header promises {size}",
                          offset=len(raw))
    data = np.frombuffer(raw, dtype=np.uint8, count=size, offset=header_end)
    return data.reshape(dims)


def load_idx(images_path, labels_path, limit):
    """Read an IDX image/label pair (MNIST layout) into a ``GroupedDataset``.

    Pixels are scaled to ``[0, 1]`` and flattened. Groups are the labels,
    renumbered over the labels actually present so that no group is empty
    (the identity whenever every class occurs).
    """
    if limit < 1:
        raise FormatError(f"limit must be >= 1 to yield a non-empty dataset, got {limit}")
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels", offset=4)
    n = min(int(limit), images.shape[0])
    x = images[:n].reshape(n, -1).astype(np.float64) / 255.0
    y = labels[:n].astype(np.int64)
    present, groups = np.unique(y, return_inverse=True)
    return GroupedDataset(x, y, groups, int(y.max()) + 1, present.size)


def write_idx(path, array):
    """Write a uint8 array as an IDX file (magic 0x08 type code)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", 0x0800 | array.ndim))
        fh.write(struct.pack(">" + "I" * array.ndim, *array.shape))
        fh.write(array.tobytes())


# --- CSV ---------------------------------------------------------------------

def write_csv(dataset, path):
    header = [f"feature_{i}" for i in range(dataset.feature_dim)] + ["label", "group"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for x, y, g in zip(dataset.features, dataset.labels, dataset.groups):
            writer.writerow([repr(float(v)) for v in x] + [int(y), int(g)])


def read_csv(path, group_column="group", num_classes=None, num_groups=None):
    """Load a dataset written by :func:`write_csv`.

    ``group_column`` may name any integer column, e.g. ``"label"``.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    feature_cols = [i for i, name in enumerate(header) if name.startswith("feature_")]
    if group_column not in header or "label" not in header:
        raise FormatError(f"{path}: header must contain 'label' and {group_column!r}")
    table = np.array(rows, dtype=np.float64) if rows else np.empty((0, len(header)))
    labels = table[:, header.index("label")].astype(np.int64)
    groups = table[:, header.index(group_column)].astype(np.int64)
    return GroupedDataset(
        table[:, feature_cols], labels, groups,
        int(labels.max()) + 1 if num_classes is None else num_classes,
        int(groups.max()) + 1 if num_groups is None else num_groups,
    )
