"""Bandwidth matrices for kernel density estimation.

The bandwidth is a generalized Scott rule, ``n**(-2/(p+4)) * Sigma_hat``, where
``Sigma_hat`` is a shrinkage covariance estimate: a convex combination of the
sample covariance and a scaled identity. The mixing weight defaults to the
Ledoit-Wolf (2004) plug-in, clipped to [0, 1], which keeps the estimate
positive definite even when p exceeds n.

States carry raw moment sums so that adding a batch of observations and
recomputing is exactly equivalent to a one-shot fit on the pooled data.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np

from .data import CovariateSet
from .errors import (
    ConfigError,
    DegenerateDataError,
    DimensionMismatchError,
    NotPositiveDefiniteError,
)

# Smallest admissible eigenvalue of the shrunk covariance, relative to the
# mean diagonal entry. Below it the mixing weight is raised to restore it.
EIGENVALUE_FLOOR = 1e-10


@dataclass(frozen=True, eq=False)
class CovarianceStats:
    """Raw moment sums sufficient to recompute the shrinkage estimate.

    All sums are about the origin, so merging two stats objects is plain
    addition. ``quartic`` and ``quartic_vec`` (sums of ||x||^4 and ||x||^2 x)
    feed the Ledoit-Wolf plug-in, which needs fourth moments.
    """

    count: int
    sum_x: np.ndarray
    sum_xx: np.ndarray
    quartic: float
    quartic_vec: np.ndarray

    @staticmethod
    def from_data(values: np.ndarray) -> "CovarianceStats":
        values = np.asarray(values, dtype=np.float64)
        sq_norms = np.einsum("ij,ij->i", values, values)
        return CovarianceStats(
            count=values.shape[0],
            sum_x=values.sum(axis=0),
            sum_xx=values.T @ values,
            quartic=float(sq_norms @ sq_norms),
            quartic_vec=sq_norms @ values,
        )

    def merge(self, other: "CovarianceStats") -> "CovarianceStats":
        if other.sum_x.shape != self.sum_x.shape:
            raise DimensionMismatchError("cannot merge stats of different dimension")
        return CovarianceStats(
            count=self.count + other.count,
            sum_x=self.sum_x + other.sum_x,
            sum_xx=self.sum_xx + other.sum_xx,
            quartic=self.quartic + other.quartic,
            quartic_vec=self.quartic_vec + other.quartic_vec,
        )

    @property
    def p(self) -> int:
        return self.sum_x.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.sum_x / self.count

    @property
    def scatter(self) -> np.ndarray:
        """Sum of centered cross products, symmetrized."""
        mu = self.mean
        raw = self.sum_xx - self.count * np.outer(mu, mu)
        return (raw + raw.T) / 2.0

    def centered_quartic(self) -> float:
        """Sum over observations of ||x - mean||^4, from the raw sums."""
        mu = self.mean
        mm = float(mu @ mu)
        return float(
            self.quartic
            + 4.0 * mu @ self.sum_xx @ mu
            - 3.0 * self.count * mm * mm
            - 4.0 * mu @ self.quartic_vec
            + 2.0 * mm * np.trace(self.sum_xx)
        )


def _check_spd(matrix: np.ndarray, what: str) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionMismatchError(f"{what} must be square, got shape {matrix.shape}")
    if not np.allclose(matrix, matrix.T, rtol=1e-10, atol=1e-12):
        raise NotPositiveDefiniteError(f"{what} is not symmetric")
    smallest = float(np.linalg.eigvalsh(matrix)[0])
    if smallest <= 0.0:
        raise NotPositiveDefiniteError(
            f"{what} is not positive definite (smallest eigenvalue {smallest:.3e})",
            smallest_eigenvalue=smallest,
        )
    return matrix


def rule_of_thumb(cov_estimate: np.ndarray, n: int, p: int) -> np.ndarray:
    """Generalized Scott bandwidth: ``n**(-2/(p+4)) * cov_estimate``."""
    cov_estimate = _check_spd(cov_estimate, "covariance estimate")
    if cov_estimate.shape[0] != p:
        raise DimensionMismatchError(
            f"covariance is {cov_estimate.shape[0]}x{cov_estimate.shape[0]}, expected p={p}"
        )
    if n < 2:
        raise ConfigError("bandwidth rule needs at least 2 observations")
    return float(n) ** (-2.0 / (p + 4)) * cov_estimate


def _ledoit_wolf_weight(stats: CovarianceStats) -> float:
    """Plug-in mixing weight toward the scaled identity, in [0, 1]."""
    n, p = stats.count, stats.p
    biased = stats.scatter / n
    m = float(np.trace(biased)) / p
    d2 = float(((biased - m * np.eye(p)) ** 2).sum()) / p
    if d2 <= 0.0:
        return 0.0  # sample covariance already a multiple of the identity
    b2 = (stats.centered_quartic() - n * float((biased**2).sum())) / (p * n * n)
    b2 = min(max(b2, 0.0), d2)
    return b2 / d2


def _shrink(stats: CovarianceStats, weight: float | None) -> tuple[np.ndarray, float]:
    n, p = stats.count, stats.p
    if n < 2:
        raise ConfigError("shrinkage covariance needs at least 2 observations")
    sample = stats.scatter / (n - 1)
    trace = float(np.trace(sample))
    if trace <= 0.0:
        raise DegenerateDataError("all-constant data: sample covariance has zero trace")
    if weight is None:
        weight = _ledoit_wolf_weight(stats)
    weight = float(min(max(weight, 0.0), 1.0))
    target_scale = trace / p
    shrunk = (1.0 - weight) * sample + weight * target_scale * np.eye(p)
    floor = EIGENVALUE_FLOOR * target_scale
    smallest = float(np.linalg.eigvalsh(shrunk)[0])
    if smallest < floor:
        mu_min = float(np.linalg.eigvalsh(sample)[0])
        if target_scale - mu_min <= 0.0:
            needed = 1.0
        else:
            needed = (floor - mu_min) / (target_scale - mu_min)
        weight = float(min(max(needed, weight), 1.0))
        shrunk = (1.0 - weight) * sample + weight * target_scale * np.eye(p)
        warnings.warn(
            f"shrinkage weight raised to {weight:.3e} to keep the covariance "
            "safely positive definite",
            RuntimeWarning,
            stacklevel=3,
        )
    return (shrunk + shrunk.T) / 2.0, weight


def shrinkage_covariance(
    data: CovariateSet, weight: float | None = None
) -> tuple[np.ndarray, float]:
    """Shrunk covariance ``(1-w)*S + w*(tr(S)/p)*I`` and the weight used.

    ``weight=None`` selects the Ledoit-Wolf plug-in; passing a value fixes it
    (clipped to [0, 1]).
    """
    return _shrink(CovarianceStats.from_data(data.values), weight)


@dataclass(frozen=True, eq=False)
class BandwidthState:
    """Inverse bandwidth plus the sufficient statistics that produced it.

    ``inverse`` is the p x p SPD inverse of the bandwidth matrix and
    ``log_det_neg_half`` equals log(det(H)**-0.5). ``weight_override`` pins
    the shrinkage weight for all future updates when set.
    """

    inverse: np.ndarray
    log_det_neg_half: float
    n: int
    shrinkage_weight: float
    stats: CovarianceStats | None
    weight_override: float | None = None

    def __post_init__(self):
        inv = _check_spd(self.inverse, "bandwidth inverse")
        expected = 0.5 * float(np.linalg.slogdet(inv)[1])
        if abs(expected - self.log_det_neg_half) > 1e-8 * max(1.0, abs(expected)):
            raise ConfigError("log_det_neg_half inconsistent with the stored inverse")
        if self.n < 1:
            raise ConfigError("bandwidth state needs n >= 1")
        if not 0.0 <= self.shrinkage_weight <= 1.0:
            raise ConfigError("shrinkage weight must lie in [0, 1]")
        inv = inv.copy()
        inv.setflags(write=False)
        object.__setattr__(self, "inverse", inv)

    @property
    def p(self) -> int:
        return self.inverse.shape[0]

    @property
    def tag(self) -> str:
        digest = hashlib.sha256(self.inverse.tobytes() + str(self.n).encode())
        return digest.hexdigest()[:16]

    @staticmethod
    def from_stats(
        stats: CovarianceStats, weight_override: float | None = None
    ) -> "BandwidthState":
        shrunk, weight = _shrink(stats, weight_override)
        bandwidth = rule_of_thumb(shrunk, stats.count, stats.p)
        eigvals, eigvecs = np.linalg.eigh(bandwidth)
        inverse = (eigvecs / eigvals) @ eigvecs.T
        return BandwidthState(
            inverse=(inverse + inverse.T) / 2.0,
            log_det_neg_half=-0.5 * float(np.log(eigvals).sum()),
            n=stats.count,
            shrinkage_weight=weight,
            stats=stats,
            weight_override=weight_override,
        )

    @staticmethod
    def from_data(data: CovariateSet, weight_override: float | None = None) -> "BandwidthState":
        if data.n < 2:
            raise ConfigError("bandwidth fitting needs at least 2 observations")
        return BandwidthState.from_stats(
            CovarianceStats.from_data(data.values), weight_override
        )


def update_inverse(state: BandwidthState, batch: CovariateSet) -> BandwidthState:
    """Fold a batch into the state; equivalent to refitting on the pooled data."""
    if batch.n == 0:
        return state
    if batch.p != state.p:
        raise DimensionMismatchError(f"batch has p={batch.p}, state has p={state.p}")
    if state.stats is None:
        raise ConfigError("state carries no sufficient statistics; refit from data")
    merged = state.stats.merge(CovarianceStats.from_data(batch.values))
    return BandwidthState.from_stats(merged, state.weight_override)
