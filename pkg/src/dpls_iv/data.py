"""Dataset container, instrument augmentation, splitting, and seeded RNG.

Matrices are dense row-major float64 throughout; the largest designs this
package targets are on the order of 10^4 x 10^2, so no sparse path exists.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

__all__ = [
    "Dataset",
    "AugmentedInstruments",
    "SplitIndices",
    "SeededRng",
    "augment_instruments",
    "split_indices",
    "split_dataset",
]


def _as_float_matrix(a, name, ndim):
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise DataError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite entries")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


class SeededRng:
    """Deterministic random source for every stochastic operation.

    Streams come from numpy's Philox counter-based bit generator keyed by
    ``SeedSequence((seed, *path))``. Identical ``(seed, path)`` pairs produce
    bit-identical streams on every platform. Child generators derived through
    :meth:`child` are statistically independent of the parent and of each
    other, which is how replications and pipeline stages stay decoupled.
    """

    algorithm = "philox4x64 keyed by SeedSequence((seed, *path))"

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        seed = int(seed)
        if seed < 0:
            raise DataError("seed must be a non-negative integer")
        self.seed = seed
        self.path = tuple(int(t) for t in path)
        self._gen: np.random.Generator | None = None

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            seq = np.random.SeedSequence((self.seed, *self.path))
            self._gen = np.random.Generator(np.random.Philox(seq))
        return self._gen

    def child(self, *tags: int) -> "SeededRng":
        """A fresh, independent stream addressed by integer tags."""
        return SeededRng(self.seed, self.path + tags)

    # Thin delegations; keeping them here means call sites never touch
    # numpy's global state.
    def normal(self, size=None, loc=0.0, scale=1.0):
        return self.generator.normal(loc=loc, scale=scale, size=size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high=high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, path={self.path})"


@dataclass(frozen=True)
class Dataset:
    """Outcome y, policy p, instruments z (n x m), covariates x (n x k).

    Constructors validate rather than repair: all row counts must agree, every
    entry must be finite, and m + k must be strictly smaller than n so the
    augmented instrument matrix has more rows than columns.
    """

    y: np.ndarray
    p: np.ndarray
    z: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = _as_float_matrix(self.y, "y", 1)
        p = _as_float_matrix(self.p, "p", 1)
        z = _as_float_matrix(self.z, "z", 2)
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim == 1 and x.size == 0:
            x = x.reshape(len(y), 0)
        x = _as_float_matrix(x, "x", 2)
        n = len(y)
        if not (len(p) == n and z.shape[0] == n and x.shape[0] == n):
            raise DataError(
                "row counts differ: "
                f"y={n}, p={len(p)}, z={z.shape[0]}, x={x.shape[0]}"
            )
        if z.shape[1] < 1:
            raise DataError("z must have at least one instrument column")
        if z.shape[1] + x.shape[1] >= n:
            raise DataError(
                f"m + k = {z.shape[1] + x.shape[1]} must be < n = {n}"
            )
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def m(self) -> int:
        return self.z.shape[1]

    @property
    def k(self) -> int:
        return self.x.shape[1]

    def take(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.y[idx], self.p[idx], self.z[idx], self.x[idx])


@dataclass(frozen=True)
class AugmentedInstruments:
    """Column concatenation [z, x]: instruments first, covariates after."""

    zbar: np.ndarray
    m: int
    k: int

    def __post_init__(self):
        zbar = _as_float_matrix(self.zbar, "zbar", 2)
        if zbar.shape[1] != self.m + self.k:
            raise DataError("zbar column count must equal m + k")
        object.__setattr__(self, "zbar", zbar)

    @property
    def n(self) -> int:
        return self.zbar.shape[0]


def augment_instruments(z, x) -> AugmentedInstruments:
    """Build the augmented instrument matrix [z, x]."""
    z = np.asarray(z, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1 and x.size == 0:
        x = x.reshape(z.shape[0], 0)
    if z.ndim != 2 or x.ndim != 2:
        raise DataError("z and x must be matrices")
    if z.shape[0] != x.shape[0]:
        raise DataError(
            f"row counts differ: z has {z.shape[0]}, x has {x.shape[0]}"
        )
    zbar = np.hstack([z, x]) if x.shape[1] else z.copy()
    return AugmentedInstruments(zbar=zbar, m=z.shape[1], k=x.shape[1])


@dataclass(frozen=True)
class SplitIndices:
    """Disjoint train/test row indices covering 0..n-1."""

    train: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        train = np.asarray(self.train, dtype=np.intp)
        test = np.asarray(self.test, dtype=np.intp)
        if len(train) == 0 or len(test) == 0:
            raise DataError("both splits must be non-empty")
        joined = np.concatenate([train, test])
        n = len(joined)
        if not np.array_equal(np.sort(joined), np.arange(n)):
            raise DataError("train/test must partition 0..n-1")
        train = train.copy()
        test = test.copy()
        train.setflags(write=False)
        test.setflags(write=False)
        object.__setattr__(self, "train", train)
        object.__setattr__(self, "test", test)


def split_indices(n: int, test_fraction: float, rng: SeededRng) -> SplitIndices:
    """Uniformly random permutation cut; deterministic given the rng seed."""
    if not (0.0 < test_fraction < 1.0):
        raise DataError("test_fraction must lie strictly inside (0, 1)")
    if n < 4:
        raise DataError("need at least 4 rows to split")
    n_test = int(round(n * test_fraction))
    n_test = min(max(n_test, 1), n - 1)
    perm = rng.permutation(n)
    return SplitIndices(
        train=np.sort(perm[n_test:]),
        test=np.sort(perm[:n_test]),
    )


def split_dataset(
    ds: Dataset, test_fraction: float, rng: SeededRng
) -> tuple[Dataset, Dataset]:
    """Split rows into (train, test) datasets.

    Both partitions must individually satisfy m + k < n_split, otherwise the
    downstream estimators are unidentified and the split is refused.
    """
    idx = split_indices(ds.n, test_fraction, rng)
    d = ds.m + ds.k
    for name, part in (("train", idx.train), ("test", idx.test)):
        if d >= len(part):
            raise DataError(
                f"{name} split of {len(part)} rows violates m + k < n "
                f"(m + k = {d})"
            )
    return ds.take(idx.train), ds.take(idx.test)
