"""
Synthetic multi-task data and pathological non-i.i.d. partitioning

A planted orthonormal projection B (d -> k_true) is shared by every class;
labels come from per-class linear scorers applied to Bx. Clients then get a
fixed small subset of classes each, which is what makes personalization and
representation transfer measurable at desk scale.
"""
import logging
import struct
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence

import numpy as np

from ..exceptions import ConfigError, DataError
from ..models.schemas import held_out_count
from .model import Batch

logger = logging.getLogger(__name__)

BFD_MAGIC = b"BFD1"
_BFD_HEADER = struct.Struct("<4sIII")


class Dataset:
    """Row pool with a class -> row index map"""

    def __init__(self, inputs, labels, num_classes: int,
                 projection: Optional[np.ndarray] = None,
                 scorers: Optional[np.ndarray] = None):
        self.inputs = np.asarray(inputs, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.num_classes = int(num_classes)
        self.projection = projection
        self.scorers = scorers

        if self.inputs.ndim != 2 or self.labels.ndim != 1 or len(self.inputs) != len(self.labels):
            raise DataError(f"inputs {self.inputs.shape} and labels {self.labels.shape} do not match")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")

        self.class_index: Dict[int, np.ndarray] = {
            int(c): np.flatnonzero(self.labels == c) for c in np.unique(self.labels)
        }

    @property
    def num_rows(self) -> int:
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def without_rows(self, rows: np.ndarray) -> "Dataset":
        """Copy of the pool with the given row indices removed"""
        keep = np.ones(self.num_rows, dtype=bool)
        keep[np.asarray(rows, dtype=np.int64)] = False
        return Dataset(self.inputs[keep], self.labels[keep], self.num_classes,
                       self.projection, self.scorers)

    def batch(self, rows: np.ndarray, labels: Optional[np.ndarray] = None) -> Batch:
        return Batch(self.inputs[rows], self.labels[rows] if labels is None else labels)


class Shard:
    """One client's train/test slices of a Dataset"""

    def __init__(self, client_id: int, train: Batch, test: Batch, classes: FrozenSet[int],
                 train_rows: np.ndarray, test_rows: np.ndarray):
        self.client_id = client_id
        self.train = train
        self.test = test
        self.classes = frozenset(classes)
        self.train_rows = train_rows
        self.test_rows = test_rows

    def with_train_labels(self, labels: np.ndarray) -> "Shard":
        """Same rows, replaced training labels (used for label poisoning)"""
        return Shard(self.client_id, Batch(self.train.inputs, labels), self.test,
                     self.classes, self.train_rows, self.test_rows)

    def __repr__(self) -> str:
        return (f"Shard(client={self.client_id}, classes={sorted(self.classes)}, "
                f"train={len(self.train)}, test={len(self.test)})")


def generate_synthetic(d: int, k_true: int, num_classes: int, num_samples: int, noise_std: float,
                       seed: int, scorers: Optional[np.ndarray] = None,
                       sample_seed: Optional[int] = None) -> Dataset:
    """
    Draw a planted-subspace classification task

    The projection and class scorers depend on seed only; the rows depend on
    sample_seed (defaults to seed), so an independent draw of the same task is
    one call away.

    Args:
        d: input width
        k_true: planted subspace dimension (<= d)
        num_classes: C >= 2
        num_samples: N rows
        noise_std: Gaussian noise added to class scores before the argmax
        seed: task seed
        scorers: optional (C x k_true) scorer matrix; unit-norm random rows otherwise
        sample_seed: seed of the row draw

    Raises:
        ConfigError: on invalid dimensions
    """
    if d < 1 or k_true < 1 or num_samples < 1:
        raise ConfigError(f"invalid synthetic dimensions d={d}, k_true={k_true}, N={num_samples}")
    if k_true > d:
        raise ConfigError(f"k_true={k_true} exceeds d={d}")
    if num_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {num_classes}")
    if noise_std < 0:
        raise ConfigError(f"noise_std must be >= 0, got {noise_std}")

    task_rng = np.random.default_rng([seed, 0])
    projection, _ = np.linalg.qr(task_rng.standard_normal((d, k_true)))
    if scorers is None:
        scorers = task_rng.standard_normal((num_classes, k_true))
        scorers /= np.linalg.norm(scorers, axis=1, keepdims=True)
    else:
        scorers = np.asarray(scorers, dtype=np.float64)
        if scorers.shape != (num_classes, k_true):
            raise ConfigError(f"scorers must have shape {(num_classes, k_true)}, got {scorers.shape}")

    sample_rng = np.random.default_rng([seed if sample_seed is None else sample_seed, 1])
    inputs = sample_rng.standard_normal((num_samples, d))
    scores = (inputs @ projection) @ scorers.T
    if noise_std > 0:
        scores = scores + noise_std * sample_rng.standard_normal(scores.shape)
    labels = scores.argmax(axis=1)

    logger.debug(f"Synthetic task: d={d}, k_true={k_true}, C={num_classes}, N={num_samples}, "
                 f"class sizes={np.bincount(labels, minlength=num_classes).tolist()}")
    return Dataset(inputs, labels, num_classes, projection=projection, scorers=scorers)


def assign_classes(classes: Sequence[int], n_clients: int, per_client: int,
                   rng: np.random.Generator) -> List[List[int]]:
    """Round-robin over a shuffled class list; consecutive picks are distinct while per_client <= len(classes)"""
    order = [int(c) for c in rng.permutation(np.asarray(classes))]
    total = len(order)
    return [
        [order[(client * per_client + j) % total] for j in range(per_client)]
        for client in range(n_clients)
    ]


def partition_pathological(ds: Dataset, n_clients: int, classes_per_client: int, per_class: int,
                           test_fraction: float, seed: int, first_client_id: int = 0) -> List[Shard]:
    """
    Give every client a fixed subset of classes with per_class rows each

    Rows are drawn without replacement inside a shard; different clients may
    share rows. A stratified test_fraction of each class is held out.

    Raises:
        DataError: a requested class has fewer than per_class rows
        ConfigError: impossible partition parameters
    """
    if n_clients < 1 or classes_per_client < 1 or per_class < 1:
        raise ConfigError("n_clients, classes_per_client and per_class must be >= 1")
    if not 0.0 <= test_fraction < 1.0:
        raise ConfigError(f"test_fraction must lie in [0, 1), got {test_fraction}")
    available = sorted(ds.class_index)
    if classes_per_client > len(available):
        raise DataError(
            f"{classes_per_client} classes per client requested but only {len(available)} present"
        )

    rng = np.random.default_rng([seed, 2])
    assignment = assign_classes(available, n_clients, classes_per_client, rng)
    n_test = held_out_count(per_class, test_fraction)

    shards = []
    for offset, classes in enumerate(assignment):
        train_parts, test_parts = [], []
        for c in classes:
            rows = ds.class_index[c]
            if len(rows) < per_class:
                raise DataError(f"class {c} has {len(rows)} rows, {per_class} required")
            chosen = rng.choice(rows, size=per_class, replace=False)
            test_parts.append(chosen[:n_test])
            train_parts.append(chosen[n_test:])
        train_rows = np.concatenate(train_parts)
        test_rows = np.concatenate(test_parts)
        shards.append(Shard(
            client_id=first_client_id + offset,
            train=ds.batch(train_rows),
            test=ds.batch(test_rows),
            classes=frozenset(classes),
            train_rows=train_rows,
            test_rows=test_rows,
        ))

    logger.info(f"Partitioned {ds.num_rows} rows into {n_clients} shards "
                f"({classes_per_client} classes x {per_class} rows, test_fraction={test_fraction})")
    return shards


def minibatches(shard: Shard, batch_size: int, epoch_seed) -> List[Batch]:
    """
    One epoch over the shard's training rows in seeded shuffled order

    Raises:
        DataError: the shard has no training rows
        ConfigError: batch_size < 1
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    n = len(shard.train)
    if n == 0:
        raise DataError(f"client {shard.client_id} has an empty training shard")
    order = np.random.default_rng(epoch_seed).permutation(n)
    inputs, labels = shard.train.inputs, shard.train.labels
    return [
        Batch(inputs[order[start:start + batch_size]], labels[order[start:start + batch_size]])
        for start in range(0, n, batch_size)
    ]


def load_bfd1(path: str) -> Dataset:
    """
    Read a featurized dataset: magic "BFD1" | u32 N | u32 d | u32 C | N*d f32 | N u16 labels

    Raises:
        DataError: unreadable or malformed file
    """
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read dataset file {path}: {e}") from e
    if len(raw) < _BFD_HEADER.size:
        raise DataError(f"{path}: truncated header")
    magic, n, d, c = _BFD_HEADER.unpack_from(raw)
    if magic != BFD_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    expected = _BFD_HEADER.size + n * d * 4 + n * 2
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(raw)}")
    offset = _BFD_HEADER.size
    inputs = np.frombuffer(raw, dtype="<f4", count=n * d, offset=offset).reshape(n, d)
    labels = np.frombuffer(raw, dtype="<u2", count=n, offset=offset + n * d * 4)
    logger.info(f"Loaded BFD1 dataset {path}: N={n}, d={d}, C={c}")
    return Dataset(inputs.astype(np.float64), labels.astype(np.int64), c)


def save_bfd1(ds: Dataset, path: str):
    """Write a Dataset in the BFD1 layout (inputs stored as f32)"""
    header = _BFD_HEADER.pack(BFD_MAGIC, ds.num_rows, ds.input_dim, ds.num_classes)
    body = ds.inputs.astype("<f4").tobytes() + ds.labels.astype("<u2").tobytes()
    Path(path).write_bytes(header + body)
