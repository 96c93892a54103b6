"""Binary feature vectors, distances, perturbation validity and synthetic data."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

BENIGN = 0
MALWARE = 1

# (addable, removable) per family, in the order of the Android family table:
# hardware, requested permissions, app components, intents, restricted API
# calls, used permissions, suspicious API calls, network addresses.
ANDROID_FAMILY_PERMISSIONS: tuple[tuple[bool, bool], ...] = (
    (True, False),
    (True, False),
    (True, True),
    (True, False),
    (True, True),
    (False, False),
    (True, True),
    (True, True),
)

SPLITS = ("train", "validation", "test")


class DimensionMismatch(ValueError):
    pass


class CalibrationError(ValueError):
    pass


def _words(dim: int) -> int:
    return (dim + 63) // 64


class FeatureVector:
    """Sparse binary vector: sorted tuple of enabled indices over ``dim`` features.

    Instances are treated as immutable. A packed uint64 view is built lazily
    for the bit-level distance scans.
    """

    __slots__ = ("dim", "enabled", "_packed", "_hash")

    def __init__(self, dim: int, enabled: Iterable[int] = ()):
        if dim <= 0:
            raise ValueError("dim must be positive")
        idx = np.unique(np.asarray(list(enabled) if not isinstance(enabled, np.ndarray) else enabled,
                                   dtype=np.int64))
        if idx.size and (idx[0] < 0 or idx[-1] >= dim):
            raise ValueError(f"feature index out of range for dim={dim}")
        idx.setflags(write=False)
        self.dim = int(dim)
        self.enabled = idx
        self._packed = None
        self._hash = None

    @classmethod
    def from_dense(cls, bits: Sequence[float] | np.ndarray) -> "FeatureVector":
        arr = np.asarray(bits)
        return cls(arr.shape[0], np.flatnonzero(arr))

    @property
    def enabled_count(self) -> int:
        return int(self.enabled.size)

    def to_dense(self, dtype=np.float64) -> np.ndarray:
        out = np.zeros(self.dim, dtype=dtype)
        out[self.enabled] = 1
        return out

    def packed(self) -> np.ndarray:
        if self._packed is None:
            self._packed = pack_indices(self.enabled, self.dim)
            self._packed.setflags(write=False)
        return self._packed

    def with_added(self, indices: Iterable[int]) -> "FeatureVector":
        extra = np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices,
                           dtype=np.int64)
        if extra.size == 0:
            return self
        return FeatureVector(self.dim, np.union1d(self.enabled, extra))

    def with_removed(self, indices: Iterable[int]) -> "FeatureVector":
        drop = np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices,
                          dtype=np.int64)
        if drop.size == 0:
            return self
        return FeatureVector(self.dim, np.setdiff1d(self.enabled, drop, assume_unique=True))

    def __contains__(self, index: int) -> bool:
        pos = np.searchsorted(self.enabled, index)
        return bool(pos < self.enabled.size and self.enabled[pos] == index)

    def __len__(self) -> int:
        return self.enabled_count

    def __eq__(self, other) -> bool:
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return self.dim == other.dim and np.array_equal(self.enabled, other.enabled)

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self.dim, self.enabled.tobytes()))
        return self._hash

    def __repr__(self) -> str:
        shown = self.enabled.tolist()
        if len(shown) > 12:
            shown = shown[:12] + ["..."]
        return f"FeatureVector(dim={self.dim}, enabled={shown})"


def pack_indices(indices: np.ndarray, dim: int) -> np.ndarray:
    words = np.zeros(_words(dim), dtype=np.uint64)
    if len(indices):
        idx = np.asarray(indices, dtype=np.uint64)
        np.bitwise_or.at(words, (idx >> np.uint64(6)).astype(np.intp),
                         np.left_shift(np.uint64(1), idx & np.uint64(63)))
    return words


def pack_many(vectors: Sequence[FeatureVector]) -> np.ndarray:
    """Stack packed views into an (n, words) uint64 matrix."""
    if not vectors:
        return np.zeros((0, 0), dtype=np.uint64)
    return np.stack([v.packed() for v in vectors])


def popcount_rows(words: np.ndarray) -> np.ndarray:
    return np.bitwise_count(words).sum(axis=-1, dtype=np.int64)


def _check_dims(*vectors: FeatureVector) -> None:
    dim = vectors[0].dim
    for v in vectors[1:]:
        if v.dim != dim:
            raise DimensionMismatch(f"incompatible vectors: dim {dim} vs {v.dim}")


def l0_distance(a: FeatureVector, b: FeatureVector) -> int:
    _check_dims(a, b)
    return int(popcount_rows(np.bitwise_xor(a.packed(), b.packed())))


def shared_enabled(a: FeatureVector, b: FeatureVector) -> int:
    _check_dims(a, b)
    return int(popcount_rows(np.bitwise_and(a.packed(), b.packed())))


@dataclass(frozen=True)
class FeatureFamilyTable:
    dim: int
    family_of: tuple[int, ...]
    addable: dict[int, bool]
    removable: dict[int, bool]

    def __post_init__(self):
        if len(self.family_of) != self.dim:
            raise ValueError("every feature needs exactly one family")
        missing = set(self.family_of) - set(self.addable) | set(self.family_of) - set(self.removable)
        if missing:
            raise ValueError(f"families without permissions: {sorted(missing)}")
        fam = np.asarray(self.family_of, dtype=np.int64)
        add = np.array([self.addable[f] for f in self.family_of], dtype=bool)
        rem = np.array([self.removable[f] for f in self.family_of], dtype=bool)
        object.__setattr__(self, "_add_mask", add)
        object.__setattr__(self, "_rem_mask", rem)
        object.__setattr__(self, "_fam", fam)

    @property
    def addable_mask(self) -> np.ndarray:
        return self._add_mask

    @property
    def removable_mask(self) -> np.ndarray:
        return self._rem_mask

    @classmethod
    def round_robin(cls, dim: int, n_families: int = 8, add_only: bool = False,
                    permissions: Sequence[tuple[bool, bool]] = ANDROID_FAMILY_PERMISSIONS):
        family_of = tuple(i % n_families for i in range(dim))
        addable, removable = {}, {}
        for f in range(n_families):
            a, r = permissions[f % len(permissions)]
            addable[f] = a
            removable[f] = r and not add_only
        return cls(dim, family_of, addable, removable)

    @classmethod
    def permissive(cls, dim: int):
        return cls(dim, (0,) * dim, {0: True}, {0: True})

    def to_json(self) -> dict:
        return {
            "dim": self.dim,
            "families": list(self.family_of),
            "addable": {str(k): v for k, v in sorted(self.addable.items())},
            "removable": {str(k): v for k, v in sorted(self.removable.items())},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureFamilyTable":
        return cls(
            int(obj["dim"]),
            tuple(int(f) for f in obj["families"]),
            {int(k): bool(v) for k, v in obj["addable"].items()},
            {int(k): bool(v) for k, v in obj["removable"].items()},
        )


def validate_perturbations(original: FeatureVector, perturbed: FeatureVector,
                           table: FeatureFamilyTable) -> FeatureVector:
    """Restore every changed feature whose family forbids that change."""
    _check_dims(original, perturbed)
    if table.dim != original.dim:
        raise DimensionMismatch(f"table dim {table.dim} vs vector dim {original.dim}")
    added = np.setdiff1d(perturbed.enabled, original.enabled, assume_unique=True)
    removed = np.setdiff1d(original.enabled, perturbed.enabled, assume_unique=True)
    bad_add = added[~table.addable_mask[added]]
    bad_rem = removed[~table.removable_mask[removed]]
    if bad_add.size == 0 and bad_rem.size == 0:
        return perturbed
    keep = np.setdiff1d(perturbed.enabled, bad_add, assume_unique=True)
    return FeatureVector(original.dim, np.union1d(keep, bad_rem))


def discretize(real_vector: Sequence[float] | np.ndarray, original: FeatureVector,
               table: FeatureFamilyTable, validate: bool = True) -> FeatureVector:
    x = np.asarray(real_vector, dtype=np.float64)
    if x.shape != (original.dim,):
        raise DimensionMismatch(f"expected length {original.dim}, got {x.shape}")
    v = FeatureVector(original.dim, np.flatnonzero(x >= 0.5))
    return validate_perturbations(original, v, table) if validate else v


@dataclass(frozen=True)
class DatasetStats:
    avg_dist: float
    avg_shared: float
    avg_features: float
    pair_budget: int
    pairs_used: int

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetStats":
        return cls(float(obj["avg_dist"]), float(obj["avg_shared"]), float(obj["avg_features"]),
                   int(obj["pair_budget"]), int(obj["pairs_used"]))


def _pairwise_shared(packed: np.ndarray, rows: np.ndarray, cols: np.ndarray,
                     chunk: int = 65536) -> np.ndarray:
    out = np.empty(rows.size, dtype=np.int64)
    for s in range(0, rows.size, chunk):
        r, c = rows[s:s + chunk], cols[s:s + chunk]
        out[s:s + chunk] = popcount_rows(np.bitwise_and(packed[r], packed[c]))
    return out


def compute_dataset_stats(training: Sequence[FeatureVector], pair_budget: int = 100_000,
                          seed: int = 0) -> DatasetStats:
    n = len(training)
    if n < 2:
        raise CalibrationError("need at least two training vectors")
    if pair_budget < 1:
        raise ValueError("pair_budget must be >= 1")
    _check_dims(*training)
    counts = np.array([v.enabled_count for v in training], dtype=np.int64)
    total = n * (n - 1) // 2
    if total <= pair_budget:
        rows, cols = np.triu_indices(n, k=1)
    else:
        rng = np.random.default_rng(seed)
        # uniform over unordered pairs i < j
        flat = rng.choice(total, size=pair_budget, replace=False)
        rows, cols = _unrank_pairs(flat, n)
    packed = pack_many(training)
    shared = _pairwise_shared(packed, rows, cols)
    dist = counts[rows] + counts[cols] - 2 * shared
    return DatasetStats(
        avg_dist=float(dist.mean()),
        avg_shared=float(shared.mean()),
        avg_features=float(counts.mean()),
        pair_budget=int(pair_budget),
        pairs_used=int(rows.size),
    )


def _unrank_pairs(ranks: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    # rank r enumerates (i, j), i < j, row by row: row i holds n-1-i pairs
    ranks = np.asarray(ranks, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(np.arange(n - 1, 0, -1))])
    i = np.searchsorted(starts, ranks, side="right") - 1
    j = ranks - starts[i] + i + 1
    return i, j


@dataclass
class Dataset:
    dim: int
    vectors: list[FeatureVector]
    labels: np.ndarray
    splits: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.splits = np.asarray(self.splits, dtype=object)
        if not (len(self.vectors) == self.labels.size == self.splits.size):
            raise ValueError("vectors, labels and splits must align")
        if np.any((self.labels != 0) & (self.labels != 1)):
            raise ValueError("labels must be 0 or 1")
        for v in self.vectors:
            if v.dim != self.dim:
                raise DimensionMismatch("all vectors must share dim")

    def indices(self, split: str | None = None, label: int | None = None) -> np.ndarray:
        mask = np.ones(self.labels.size, dtype=bool)
        if split is not None:
            mask &= self.splits == split
        if label is not None:
            mask &= self.labels == label
        return np.flatnonzero(mask)

    def select(self, split: str | None = None, label: int | None = None) -> list[FeatureVector]:
        return [self.vectors[i] for i in self.indices(split, label)]

    def matrix(self, split: str | None = None, label: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        idx = self.indices(split, label)
        X = np.zeros((idx.size, self.dim))
        for row, i in enumerate(idx):
            X[row, self.vectors[i].enabled] = 1.0
        return X, self.labels[idx].copy()

    def subset(self, idx: Sequence[int]) -> "Dataset":
        idx = list(idx)
        return Dataset(self.dim, [self.vectors[i] for i in idx], self.labels[idx], self.splits[idx])


@dataclass
class SyntheticConfig:
    dim: int = 512
    n_per_class: int = 2000
    benign_prototype_density: float = 0.3
    malware_prototype_density: float = 0.1
    flip_noise: float = 0.05
    n_families: int = 8
    add_only: bool = False
    split_ratio: tuple[float, float, float] = (0.64, 0.16, 0.20)

    def validate(self) -> None:
        for name in ("benign_prototype_density", "malware_prototype_density", "flip_noise"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {val}")
        if not self.dim >= self.n_families >= 1:
            raise ValueError("need dim >= n_families >= 1")
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be positive")
        if len(self.split_ratio) != 3 or abs(sum(self.split_ratio) - 1.0) > 1e-9:
            raise ValueError("split_ratio must be three fractions summing to 1")


def split_tags(n: int, ratio: Sequence[float], rng: np.random.Generator) -> np.ndarray:
    n_train = int(round(ratio[0] * n))
    n_val = int(round(ratio[1] * n))
    tags = np.array(["train"] * n_train + ["validation"] * n_val + ["test"] * (n - n_train - n_val),
                    dtype=object)
    return tags[rng.permutation(n)]


def generate_synthetic_dataset(config: SyntheticConfig, seed: int = 0) -> tuple[Dataset, FeatureFamilyTable]:
    config.validate()
    rng = np.random.default_rng(seed)
    dim, n = config.dim, config.n_per_class
    protos = {
        BENIGN: rng.random(dim) < config.benign_prototype_density,
        MALWARE: rng.random(dim) < config.malware_prototype_density,
    }
    vectors, labels, splits = [], [], []
    for label in (BENIGN, MALWARE):
        flips = rng.random((n, dim)) < config.flip_noise
        bits = np.logical_xor(protos[label][None, :], flips)
        vectors.extend(FeatureVector(dim, np.flatnonzero(row)) for row in bits)
        labels.extend([label] * n)
        # stratified split keeps both classes in every partition
        splits.extend(split_tags(n, config.split_ratio, rng))
    table = FeatureFamilyTable.round_robin(dim, config.n_families, add_only=config.add_only)
    return Dataset(dim, vectors, np.array(labels), np.array(splits, dtype=object)), table


def save_dataset(dataset: Dataset, table: FeatureFamilyTable, directory: str | Path) -> None:
    """Write ``header.json`` plus ``samples.jsonl`` (one sample per line)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = table.to_json()
    header["dim"] = dataset.dim
    (directory / "header.json").write_text(json.dumps(header, sort_keys=True) + "\n")
    with open(directory / "samples.jsonl", "w") as fh:
        for v, y, s in zip(dataset.vectors, dataset.labels, dataset.splits):
            fh.write(json.dumps({"label": int(y), "features": v.enabled.tolist(), "split": str(s)}) + "\n")


def load_dataset(directory: str | Path) -> tuple[Dataset, FeatureFamilyTable]:
    directory = Path(directory)
    header = json.loads((directory / "header.json").read_text())
    table = FeatureFamilyTable.from_json(header)
    dim = int(header["dim"])
    vectors, labels, splits = [], [], []
    with open(directory / "samples.jsonl") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            vectors.append(FeatureVector(dim, rec["features"]))
            labels.append(int(rec["label"]))
            splits.append(rec.get("split", "train"))
    return Dataset(dim, vectors, np.array(labels), np.array(splits, dtype=object)), table


def save_stats(stats: DatasetStats, path: str | Path) -> None:
    Path(path).write_text(json.dumps(stats.to_json(), sort_keys=True, indent=2) + "\n")
