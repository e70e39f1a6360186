"""Gaussian-kernel gram matrix and the KDE balance criterion.

The gram matrix holds the pairwise integrals of kernel products over R^p for
the unnormalized Gaussian kernel ``K(x) = exp(-x.x/2)``: diagonal entries are
``pi**(p/2) * det(H)**-0.5`` and off-diagonal entries multiply that constant
by ``exp(-(zi-zj)' Hinv (zi-zj) / 4)``. The balance criterion of a partition
is the largest squared L2 distance between a group's KDE and the pooled KDE,
evaluated exactly from gram block sums.

Block sums always accumulate in row-major order over ascending unit indices,
so incremental (swap-delta) evaluation is bitwise identical to evaluating
from scratch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bandwidth import BandwidthState
from .data import CovariateSet, Partition
from .errors import ConfigError, DimensionMismatchError

# Negative criterion values larger than this (relative to the gram diagonal)
# indicate an inconsistent gram rather than rounding noise.
NEGATIVE_TOLERANCE = 1e-12

# Memory cap for dense grams; raise explicitly for bigger problems or use
# criterion_streaming, which never materializes the matrix.
DEFAULT_MAX_UNITS = 5000


def _pairwise_quadform(left: np.ndarray, right: np.ndarray, inverse: np.ndarray) -> np.ndarray:
    """Matrix of (li - rj)' inverse (li - rj), clipped to be nonnegative."""
    left_rot = left @ inverse
    sq_left = np.einsum("ij,ij->i", left_rot, left)
    sq_right = np.einsum("ij,ij->i", right @ inverse, right)
    quad = sq_left[:, None] + sq_right[None, :] - 2.0 * (left_rot @ right.T)
    return np.maximum(quad, 0.0)


def _diagonal_value(bandwidth: BandwidthState) -> float:
    return math.exp(0.5 * bandwidth.p * math.log(math.pi) + bandwidth.log_det_neg_half)


@dataclass(frozen=True, eq=False)
class KernelGram:
    """Symmetric matrix of pairwise kernel-product integrals.

    Immutable once built; ``row_sums``/``total`` are precomputed because every
    criterion evaluation needs them and they do not depend on the partition.
    """

    entries: np.ndarray
    bandwidth_tag: str
    diagonal_value: float
    row_sums: np.ndarray
    total: float

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @staticmethod
    def from_entries(entries: np.ndarray, bandwidth_tag: str, diagonal_value: float) -> "KernelGram":
        entries = np.ascontiguousarray(entries, dtype=np.float64)
        entries.setflags(write=False)
        row_sums = entries.sum(axis=1)
        row_sums.setflags(write=False)
        return KernelGram(
            entries=entries,
            bandwidth_tag=bandwidth_tag,
            diagonal_value=diagonal_value,
            row_sums=row_sums,
            total=float(row_sums.sum()),
        )


def compute_gram(
    covariates: CovariateSet,
    bandwidth: BandwidthState,
    max_units: int = DEFAULT_MAX_UNITS,
) -> KernelGram:
    """Dense gram over all unit pairs. Deterministic for fixed inputs."""
    if covariates.p != bandwidth.p:
        raise DimensionMismatchError(
            f"covariates have p={covariates.p}, bandwidth has p={bandwidth.p}"
        )
    if covariates.n > max_units:
        raise ConfigError(
            f"{covariates.n} units exceeds the dense-gram cap of {max_units}; "
            "raise max_units explicitly or use criterion_streaming"
        )
    scale = _diagonal_value(bandwidth)
    quad = _pairwise_quadform(covariates.values, covariates.values, bandwidth.inverse)
    quad = (quad + quad.T) / 2.0
    entries = scale * np.exp(-0.25 * quad)
    np.fill_diagonal(entries, scale)
    return KernelGram.from_entries(entries, bandwidth.tag, scale)


def extend_gram(
    gram: KernelGram,
    old: CovariateSet,
    new: CovariateSet,
    bandwidth: BandwidthState,
) -> KernelGram:
    """Append units to a gram, reusing the existing block unchanged.

    Requires the gram to have been built with the same bandwidth (checked via
    its tag); recompute from scratch when the bandwidth has moved on.
    """
    if gram.bandwidth_tag != bandwidth.tag:
        raise ConfigError(
            "gram was built with a different bandwidth; recompute instead of extending"
        )
    if old.n != gram.n:
        raise DimensionMismatchError(f"gram covers {gram.n} units, old set has {old.n}")
    if new.n == 0:
        return gram
    if new.p != old.p and old.n > 0:
        raise DimensionMismatchError(f"new units have p={new.p}, old have p={old.p}")
    if old.n == 0:
        return compute_gram(new, bandwidth)
    scale = gram.diagonal_value
    cross = scale * np.exp(
        -0.25 * _pairwise_quadform(new.values, old.values, bandwidth.inverse)
    )
    quad_new = _pairwise_quadform(new.values, new.values, bandwidth.inverse)
    quad_new = (quad_new + quad_new.T) / 2.0
    block_new = scale * np.exp(-0.25 * quad_new)
    np.fill_diagonal(block_new, scale)
    entries = np.block([[gram.entries, cross.T], [cross, block_new]])
    return KernelGram.from_entries(entries, gram.bandwidth_tag, scale)


def _group_term(
    entries: np.ndarray,
    row_sums: np.ndarray,
    total: float,
    idx: np.ndarray,
    n_total: int,
) -> tuple[float, float, float]:
    """One group's squared KDE distance from the pooled KDE, plus block sums."""
    within = float(entries.take(idx, 0).take(idx, 1).sum())
    row_block = float(row_sums.take(idx).sum())
    size = idx.size
    coef = (n_total - size) / (size * n_total)
    term = (
        coef * coef * within
        + (total - 2.0 * row_block + within) / (n_total * n_total)
        - 2.0 * coef * (row_block - within) / n_total
    )
    return term, within, row_block


def _clamped_max(terms: np.ndarray, diagonal_value: float) -> float:
    value = float(terms.max())
    if value >= 0.0:
        return value
    if value >= -NEGATIVE_TOLERANCE * diagonal_value:
        return 0.0
    raise ConfigError(
        f"criterion evaluated to {value:.3e}, beyond rounding tolerance; "
        "the gram and partition are inconsistent"
    )


@dataclass(frozen=True, eq=False)
class CriterionCache:
    """Per-group block sums backing O(changed-groups) swap updates."""

    members: tuple[np.ndarray, ...]
    within: np.ndarray
    row_blocks: np.ndarray
    terms: np.ndarray
    value: float


def build_criterion_cache(gram: KernelGram, partition: Partition) -> CriterionCache:
    if partition.n != gram.n:
        raise DimensionMismatchError(f"partition covers {partition.n} units, gram {gram.n}")
    members = tuple(partition.members())
    count = len(members)
    within = np.empty(count)
    row_blocks = np.empty(count)
    terms = np.empty(count)
    for l, idx in enumerate(members):
        terms[l], within[l], row_blocks[l] = _group_term(
            gram.entries, gram.row_sums, gram.total, idx, gram.n
        )
    value = _clamped_max(terms, gram.diagonal_value)
    return CriterionCache(members, within, row_blocks, terms, value)


def criterion(gram: KernelGram, partition: Partition) -> float:
    """Largest squared L2 distance between a group KDE and the pooled KDE."""
    if partition.n != gram.n:
        raise DimensionMismatchError(f"partition covers {partition.n} units, gram {gram.n}")
    entries, row_sums, total, n = gram.entries, gram.row_sums, gram.total, gram.n
    best = -math.inf
    for idx in partition.members():
        term, _, _ = _group_term(entries, row_sums, total, idx, n)
        if term > best:
            best = term
    if best >= 0.0:
        return best
    if best >= -NEGATIVE_TOLERANCE * gram.diagonal_value:
        return 0.0
    raise ConfigError(
        f"criterion evaluated to {best:.3e}, beyond rounding tolerance; "
        "the gram and partition are inconsistent"
    )


def criterion_delta(
    gram: KernelGram,
    partition: Partition,
    cache: CriterionCache,
    swap: tuple[int, int],
) -> tuple[float, CriterionCache]:
    """Criterion after units ``swap=(i, j)`` exchange groups.

    Bitwise identical to rebuilding the cache on the swapped partition: only
    the two affected groups' block sums are recomputed, with the same
    reductions a full evaluation uses.
    """
    unit_i, unit_j = swap
    group_i = int(partition.groups[unit_i])
    group_j = int(partition.groups[unit_j])
    if group_i == group_j:
        raise ConfigError(f"units {unit_i} and {unit_j} are both in group {group_i}")
    members = list(cache.members)
    members[group_i - 1] = members[group_i - 1][members[group_i - 1] != unit_i]
    members[group_j - 1] = members[group_j - 1][members[group_j - 1] != unit_j]
    members[group_j - 1] = np.sort(np.append(members[group_j - 1], unit_i))
    members[group_i - 1] = np.sort(np.append(members[group_i - 1], unit_j))
    within = cache.within.copy()
    row_blocks = cache.row_blocks.copy()
    terms = cache.terms.copy()
    for l in (group_i - 1, group_j - 1):
        terms[l], within[l], row_blocks[l] = _group_term(
            gram.entries, gram.row_sums, gram.total, members[l], gram.n
        )
    value = _clamped_max(terms, gram.diagonal_value)
    return value, CriterionCache(tuple(members), within, row_blocks, terms, value)


def swapped_partition(partition: Partition, swap: tuple[int, int]) -> Partition:
    """The partition after the two units exchange group labels."""
    unit_i, unit_j = swap
    groups = partition.groups.copy()
    groups[unit_i], groups[unit_j] = groups[unit_j], groups[unit_i]
    return Partition._trusted(groups, partition.group_count)


def kde_eval(
    subset: CovariateSet,
    bandwidth: BandwidthState,
    points: np.ndarray,
    normalized: bool = False,
) -> np.ndarray | float:
    """KDE of the subset at one point (p,) or several points (m, p).

    Uses the unnormalized kernel by default (integral (2*pi)**(p/2));
    ``normalized=True`` rescales to a proper density.
    """
    if subset.n == 0:
        raise ConfigError("cannot evaluate a KDE over an empty subset")
    points = np.asarray(points, dtype=np.float64)
    single = points.ndim == 1
    pts = np.atleast_2d(points)
    if pts.shape[1] != subset.p:
        raise DimensionMismatchError(f"points have p={pts.shape[1]}, subset has p={subset.p}")
    quad = _pairwise_quadform(pts, subset.values, bandwidth.inverse)
    dens = np.exp(-0.5 * quad).sum(axis=1) * (
        math.exp(bandwidth.log_det_neg_half) / subset.n
    )
    if normalized:
        dens = dens * (2.0 * math.pi) ** (-0.5 * subset.p)
    return float(dens[0]) if single else dens


@dataclass(frozen=True)
class GridSpec:
    """Tensor quadrature grid: per-axis point count and padding in bandwidth sds."""

    points_per_dim: int | None = None
    padding_sds: float = 6.0

    def resolve_points(self, p: int) -> int:
        if self.points_per_dim is not None:
            if self.points_per_dim < 9:
                raise ConfigError("quadrature grid needs at least 9 points per axis")
            return self.points_per_dim
        return 2001 if p == 1 else 401


def criterion_by_quadrature(
    covariates: CovariateSet,
    partition: Partition,
    bandwidth: BandwidthState,
    grid: GridSpec | None = None,
) -> float:
    """Trapezoid-grid evaluation of the criterion straight from its definition.

    Validation oracle for p <= 2 only: integrates the squared difference of
    group and pooled KDEs over a padded tensor grid.
    """
    if covariates.p > 2:
        raise ConfigError("quadrature oracle supports p <= 2 only")
    if partition.n != covariates.n:
        raise DimensionMismatchError("partition length does not match covariates")
    grid = grid or GridSpec()
    points = grid.resolve_points(covariates.p)
    h_diag = np.sqrt(np.diag(np.linalg.inv(bandwidth.inverse)))
    axes = [
        np.linspace(
            covariates.values[:, d].min() - grid.padding_sds * h_diag[d],
            covariates.values[:, d].max() + grid.padding_sds * h_diag[d],
            points,
        )
        for d in range(covariates.p)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=1)
    pooled = kde_eval(covariates, bandwidth, nodes)
    best = 0.0
    for idx in partition.members():
        group_dens = kde_eval(covariates.select(idx), bandwidth, nodes)
        integrand = (group_dens - pooled) ** 2
        integrand = integrand.reshape([points] * covariates.p)
        for axis_nodes in reversed(axes):
            integrand = np.trapezoid(integrand, axis_nodes, axis=-1)
        best = max(best, float(integrand))
    return best


def criterion_streaming(
    covariates: CovariateSet,
    partition: Partition,
    bandwidth: BandwidthState,
    chunk_size: int = 1024,
) -> float:
    """Exact criterion without materializing the gram (memory O(chunk * n)).

    Intended for unit counts beyond the dense-gram cap; agrees with
    ``criterion`` up to summation-order roundoff.
    """
    if covariates.p != bandwidth.p:
        raise DimensionMismatchError(
            f"covariates have p={covariates.p}, bandwidth has p={bandwidth.p}"
        )
    if partition.n != covariates.n:
        raise DimensionMismatchError("partition length does not match covariates")
    values = covariates.values
    n = covariates.n
    scale = _diagonal_value(bandwidth)
    members = partition.members()
    count = partition.group_count
    labels = partition.groups
    within = np.zeros(count)
    row_blocks = np.zeros(count)
    total = 0.0
    for start in range(0, n, chunk_size):
        stop = min(start + chunk_size, n)
        block = scale * np.exp(
            -0.25 * _pairwise_quadform(values[start:stop], values, bandwidth.inverse)
        )
        block[np.arange(stop - start), np.arange(start, stop)] = scale
        row = block.sum(axis=1)
        total += float(row.sum())
        chunk_labels = labels[start:stop]
        for l in range(count):
            local = np.flatnonzero(chunk_labels == l + 1)
            if local.size == 0:
                continue
            row_blocks[l] += float(row[local].sum())
            within[l] += float(block[np.ix_(local, members[l])].sum())
    sizes = np.array([idx.size for idx in members], dtype=np.float64)
    coef = (n - sizes) / (sizes * n)
    terms = (
        coef * coef * within
        + (total - 2.0 * row_blocks + within) / (n * n)
        - 2.0 * coef * (row_blocks - within) / n
    )
    return _clamped_max(terms, scale)
