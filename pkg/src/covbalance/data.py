"""Core value types: covariate tables and group partitions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionMismatchError


def _as_float_matrix(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"covariate values must be 2-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class CovariateSet:
    """A table of unit covariates: one row per unit, one column per covariate.

    ``unit_ids`` are opaque, unique identifiers; ``values`` is an (n, p) float
    matrix with all entries finite. Empty tables (n == 0) are allowed so that
    streaming edge cases compose cleanly.
    """

    unit_ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        arr = _as_float_matrix(self.values)
        if len(self.unit_ids) != arr.shape[0]:
            raise DimensionMismatchError(
                f"{len(self.unit_ids)} unit ids for {arr.shape[0]} covariate rows"
            )
        if len(set(self.unit_ids)) != len(self.unit_ids):
            raise ConfigError("unit ids must be unique")
        if arr.size and not np.all(np.isfinite(arr)):
            bad = np.argwhere(~np.isfinite(arr))[0]
            raise ConfigError(f"non-finite covariate value at row {bad[0]}, column {bad[1]}")
        arr.setflags(write=False)
        object.__setattr__(self, "unit_ids", tuple(str(u) for u in self.unit_ids))
        object.__setattr__(self, "values", arr)

    @staticmethod
    def from_values(values, unit_ids=None, id_prefix: str = "u") -> "CovariateSet":
        arr = _as_float_matrix(values)
        if unit_ids is None:
            width = max(1, len(str(max(arr.shape[0] - 1, 0))))
            unit_ids = tuple(f"{id_prefix}{i:0{width}d}" for i in range(arr.shape[0]))
        return CovariateSet(tuple(unit_ids), arr)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def concat(self, other: "CovariateSet") -> "CovariateSet":
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        if other.p != self.p:
            raise DimensionMismatchError(f"cannot concat p={other.p} onto p={self.p}")
        overlap = set(self.unit_ids) & set(other.unit_ids)
        if overlap:
            raise ConfigError(f"duplicate unit ids across tables: {sorted(overlap)[:5]}")
        return CovariateSet(
            self.unit_ids + other.unit_ids, np.vstack([self.values, other.values])
        )

    def select(self, indices) -> "CovariateSet":
        idx = np.asarray(indices, dtype=np.intp)
        return CovariateSet(tuple(self.unit_ids[i] for i in idx), self.values[idx])


def balanced_sizes(n: int, group_count: int) -> tuple[int, ...]:
    """Near-equal group sizes (differ pairwise by at most one, larger first)."""
    if group_count < 1 or n < group_count:
        raise ConfigError(f"cannot split {n} units into {group_count} non-empty groups")
    base, rem = divmod(n, group_count)
    return tuple(base + 1 if l < rem else base for l in range(group_count))


@dataclass(frozen=True, eq=False)
class Partition:
    """Assignment of n units to groups 1..group_count, every group non-empty."""

    groups: np.ndarray
    group_count: int

    def __post_init__(self):
        arr = np.array(self.groups, dtype=np.int64, copy=True)
        if arr.ndim != 1:
            raise DimensionMismatchError("partition must be a 1-D vector of group labels")
        if self.group_count < 1:
            raise ConfigError("group_count must be >= 1")
        counts = np.bincount(arr, minlength=self.group_count + 1)
        if arr.size and (arr.min() < 1 or arr.max() > self.group_count):
            raise ConfigError(f"group labels must lie in 1..{self.group_count}")
        if np.any(counts[1 : self.group_count + 1] == 0):
            empty = [l for l in range(1, self.group_count + 1) if counts[l] == 0]
            raise ConfigError(f"empty group(s): {empty}")
        arr.setflags(write=False)
        object.__setattr__(self, "groups", arr)

    @classmethod
    def _trusted(cls, groups: np.ndarray, group_count: int) -> "Partition":
        """Skip validation for partitions that are valid by construction."""
        self = object.__new__(cls)
        groups.setflags(write=False)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "group_count", group_count)
        return self

    @property
    def n(self) -> int:
        return self.groups.shape[0]

    @property
    def sizes(self) -> tuple[int, ...]:
        cached = getattr(self, "_sizes", None)
        if cached is None:
            counts = np.bincount(self.groups, minlength=self.group_count + 1)
            cached = tuple(int(c) for c in counts[1:])
            object.__setattr__(self, "_sizes", cached)
        return cached

    @property
    def is_balanced(self) -> bool:
        sizes = self.sizes
        return max(sizes) - min(sizes) <= 1

    def members(self) -> list[np.ndarray]:
        """Per-group unit indices in ascending order (groups 1..group_count).

        Computed once and cached; a stable sort on the labels keeps indices
        ascending within each group.
        """
        cached = getattr(self, "_members", None)
        if cached is None:
            order = np.argsort(self.groups, kind="stable")
            order.setflags(write=False)
            counts = np.bincount(self.groups, minlength=self.group_count + 1)
            bounds = np.cumsum(counts)
            cached = [
                order[bounds[l] : bounds[l + 1]] for l in range(self.group_count)
            ]
            object.__setattr__(self, "_members", cached)
        return cached

    def relabeled(self, mapping: dict[int, int]) -> "Partition":
        """Permute the group labels; ``mapping`` must be a bijection on 1..L."""
        if sorted(mapping) != list(range(1, self.group_count + 1)) or sorted(
            mapping.values()
        ) != list(range(1, self.group_count + 1)):
            raise ConfigError("relabeling must be a bijection on 1..group_count")
        lut = np.zeros(self.group_count + 1, dtype=np.int64)
        for src, dst in mapping.items():
            lut[src] = dst
        return Partition(lut[self.groups], self.group_count)

    @staticmethod
    def from_sizes_order(order: np.ndarray, sizes: tuple[int, ...]) -> "Partition":
        """Decode a unit ordering (block layout: sizes[0] first, ...) to labels."""
        order = np.asarray(order, dtype=np.intp)
        if order.size != sum(sizes):
            raise DimensionMismatchError("ordering length does not match group sizes")
        if order.size and (np.bincount(order, minlength=order.size).max() != 1):
            raise ConfigError("ordering must be a permutation of 0..n-1")
        groups = np.empty(order.size, dtype=np.int64)
        start = 0
        for l, size in enumerate(sizes, start=1):
            groups[order[start : start + size]] = l
            start += size
        return Partition._trusted(groups, len(sizes))

    @staticmethod
    def random_balanced(
        n: int, group_count: int, rng: np.random.Generator, sizes: tuple[int, ...] | None = None
    ) -> "Partition":
        if sizes is None:
            sizes = balanced_sizes(n, group_count)
        elif sum(sizes) != n:
            raise ConfigError("explicit sizes must sum to n")
        labels = np.repeat(np.arange(1, group_count + 1), sizes)
        return Partition._trusted(rng.permutation(labels), group_count)
