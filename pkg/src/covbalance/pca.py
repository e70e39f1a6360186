"""Principal-component reduction with streaming updates.

Streaming fits use block incremental SVD: each batch is centered, augmented
with a mean-correction row, stacked under the scaled current basis and
re-decomposed. All nonzero directions are retained by default (p here is at
most a few dozen), so the tracked subspace matches a batch fit up to
roundoff; truncation only happens when ``max_rank`` is set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CovariateSet
from .errors import ConfigError, DimensionMismatchError


@dataclass(frozen=True)
class PcaTarget:
    """Component-count rule: a fixed count or a variance fraction to reach."""

    mode: str  # "count" | "fraction"
    value: float

    def __post_init__(self):
        if self.mode not in ("count", "fraction"):
            raise ConfigError(f"unknown PCA target mode {self.mode!r}")
        if self.mode == "count" and (self.value < 1 or self.value != int(self.value)):
            raise ConfigError("component count must be a positive integer")
        if self.mode == "fraction" and not 0.0 < self.value <= 1.0:
            raise ConfigError("variance fraction must lie in (0, 1]")

    @staticmethod
    def count(q: int) -> "PcaTarget":
        return PcaTarget("count", q)

    @staticmethod
    def fraction(tau: float) -> "PcaTarget":
        return PcaTarget("fraction", tau)


def _fix_signs(basis: np.ndarray) -> np.ndarray:
    """Make each row's largest-magnitude entry positive (reproducible output)."""
    basis = basis.copy()
    for row in basis:
        lead = np.argmax(np.abs(row))
        if row[lead] < 0:
            row *= -1.0
    return basis


@dataclass(frozen=True, eq=False)
class PcaState:
    """Running mean, orthonormal basis and per-direction variances.

    ``basis``/``variances`` hold every retained direction; the public
    ``components``/``explained_variance`` expose the leading block selected
    by ``target``. ``total_variance`` is the full-dimensional variance, kept
    so the fraction rule stays correct under streaming.
    """

    mean: np.ndarray
    basis: np.ndarray
    variances: np.ndarray
    n_seen: int
    target: PcaTarget
    total_variance: float
    max_rank: int | None = None

    @property
    def p(self) -> int:
        return self.basis.shape[1]

    @property
    def n_components(self) -> int:
        if self.target.mode == "count":
            q = int(self.target.value)
            if q > self.p:
                raise ConfigError(f"requested {q} components for p={self.p}")
            return min(q, self.basis.shape[0])
        cumulative = np.cumsum(self.variances)
        needed = self.target.value * self.total_variance
        reached = np.searchsorted(cumulative, needed - 1e-12 * self.total_variance) + 1
        return int(min(reached, self.basis.shape[0]))

    @property
    def components(self) -> np.ndarray:
        return self.basis[: self.n_components]

    @property
    def explained_variance(self) -> np.ndarray:
        return self.variances[: self.n_components]

    @property
    def explained_fraction(self) -> float:
        if self.total_variance <= 0.0:
            return 1.0
        return float(self.explained_variance.sum() / self.total_variance)


def _finalize(
    mean: np.ndarray,
    basis: np.ndarray,
    singular_values: np.ndarray,
    n_seen: int,
    target: PcaTarget,
    total_scatter: float,
    max_rank: int | None,
) -> PcaState:
    order = np.argsort(singular_values)[::-1]
    singular_values = singular_values[order]
    basis = basis[order]
    cutoff = singular_values[0] * max(basis.shape[1], n_seen) * np.finfo(float).eps
    rank = int((singular_values > cutoff).sum()) if singular_values.size else 0
    rank = max(rank, 1)
    if max_rank is not None:
        rank = min(rank, max_rank)
    variances = singular_values[:rank] ** 2 / max(n_seen - 1, 1)
    return PcaState(
        mean=mean,
        basis=_fix_signs(basis[:rank]),
        variances=variances,
        n_seen=n_seen,
        target=target,
        total_variance=total_scatter / max(n_seen - 1, 1),
        max_rank=max_rank,
    )


def fit_pca(
    data: CovariateSet, target: PcaTarget, max_rank: int | None = None
) -> PcaState:
    """Batch fit: leading principal directions of the centered data."""
    if data.n < 2:
        raise ConfigError("PCA needs at least 2 observations")
    if target.mode == "count" and target.value > data.p:
        raise ConfigError(f"requested {int(target.value)} components for p={data.p}")
    mean = data.values.mean(axis=0)
    centered = data.values - mean
    _, singular_values, basis = np.linalg.svd(centered, full_matrices=False)
    total_scatter = float((centered**2).sum())
    return _finalize(mean, basis, singular_values, data.n, target, total_scatter, max_rank)


def update_pca(state: PcaState, batch: CovariateSet) -> PcaState:
    """Fold a batch into the state (incremental SVD with mean correction)."""
    if batch.n == 0:
        return state
    if batch.p != state.p:
        raise DimensionMismatchError(f"batch has p={batch.p}, state has p={state.p}")
    n_old, m = state.n_seen, batch.n
    n_new = n_old + m
    batch_mean = batch.values.mean(axis=0)
    centered = batch.values - batch_mean
    shift = batch_mean - state.mean
    correction = np.sqrt(n_old * m / n_new) * shift
    scaled_basis = state.basis * np.sqrt(state.variances * max(n_old - 1, 1))[:, None]
    stacked = np.vstack([scaled_basis, centered, correction[None, :]])
    _, singular_values, basis = np.linalg.svd(stacked, full_matrices=False)
    total_scatter = (
        state.total_variance * max(n_old - 1, 1)
        + float((centered**2).sum())
        + n_old * m / n_new * float(shift @ shift)
    )
    return _finalize(
        state.mean + (m / n_new) * shift,
        basis,
        singular_values,
        n_new,
        state.target,
        total_scatter,
        state.max_rank,
    )


def transform(state: PcaState, data: CovariateSet) -> CovariateSet:
    """Project onto the selected components, preserving unit ids."""
    if data.p != state.p:
        raise DimensionMismatchError(f"data has p={data.p}, state has p={state.p}")
    projected = (data.values - state.mean) @ state.components.T
    return CovariateSet(data.unit_ids, projected)


def inverse_transform(state: PcaState, reduced: CovariateSet) -> CovariateSet:
    """Map reduced coordinates back to the original space (best reconstruction)."""
    if reduced.p != state.n_components:
        raise DimensionMismatchError(
            f"reduced data has {reduced.p} columns, state selects {state.n_components}"
        )
    return CovariateSet(reduced.unit_ids, state.mean + reduced.values @ state.components)
