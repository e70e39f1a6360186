"""Balance and estimation-quality metrics for a fixed design.

Includes the rerandomization-style Mahalanobis balance between groups, the
closed-form mean squared errors of the difference-in-mean and least-squares
treatment estimates under a known linear model, the corresponding estimators
(OLS, logistic MLE via iteratively reweighted least squares, response-mean
differences), and marginal response probabilities under a logistic model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .data import CovariateSet, Partition
from .errors import (
    ConfigError,
    DegenerateDataError,
    DimensionMismatchError,
    RankDeficiencyError,
    SeparationError,
)

LOGISTIC_GRADIENT_TOL = 1e-8
LOGISTIC_MAX_ITER = 100
SEPARATION_NORM = 1e3
# A fit classifying every response correctly with at least this margin has
# its likelihood still increasing along the ray: the MLE sits at infinity.
SEPARATION_MARGIN = 10.0


@dataclass(frozen=True)
class BasisFunction:
    """A named feature map over covariate rows: (n, p) -> (n,)."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(values), dtype=np.float64)


def intercept() -> BasisFunction:
    return BasisFunction("intercept", lambda v: np.ones(v.shape[0]))


def linear(j: int) -> BasisFunction:
    return BasisFunction(f"z{j + 1}", lambda v, j=j: v[:, j])


def square(j: int) -> BasisFunction:
    return BasisFunction(f"z{j + 1}^2", lambda v, j=j: v[:, j] ** 2)


def interaction(j: int, k: int) -> BasisFunction:
    return BasisFunction(f"z{j + 1}*z{k + 1}", lambda v, j=j, k=k: v[:, j] * v[:, k])


def linear_basis(p: int) -> tuple[BasisFunction, ...]:
    """Intercept plus one linear term per covariate."""
    return (intercept(), *(linear(j) for j in range(p)))


def extended_basis() -> tuple[BasisFunction, ...]:
    """Intercept, 5 linear terms, squares of z1..z3, and z3*z4, z3*z5 (p=5)."""
    return (
        intercept(),
        *(linear(j) for j in range(5)),
        *(square(j) for j in range(3)),
        interaction(2, 3),
        interaction(2, 4),
    )


@dataclass(frozen=True, eq=False)
class LinearModelSpec:
    """True response surface: basis, coefficients, treatment effects, noise sd."""

    basis: tuple[BasisFunction, ...]
    coefficients: np.ndarray
    treatment_effects: np.ndarray
    noise_sd: float

    def __post_init__(self):
        names = [b.name for b in self.basis]
        if len(set(names)) != len(names):
            raise ConfigError("basis names must be unique")
        coef = np.asarray(self.coefficients, dtype=np.float64)
        if coef.shape != (len(self.basis),):
            raise DimensionMismatchError(
                f"{coef.size} coefficients for {len(self.basis)} basis functions"
            )
        if self.noise_sd <= 0:
            raise ConfigError("noise sd must be positive")
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(
            self, "treatment_effects", np.asarray(self.treatment_effects, dtype=np.float64)
        )

    def basis_matrix(self, covariates: CovariateSet) -> np.ndarray:
        return np.column_stack([b(covariates.values) for b in self.basis])

    def surface(self, covariates: CovariateSet) -> np.ndarray:
        """Covariate part of the mean response, u(z)' beta per unit."""
        return self.basis_matrix(covariates) @ self.coefficients


@dataclass(frozen=True, eq=False)
class FitResult:
    """Named coefficient estimates plus solver diagnostics (logistic only)."""

    names: tuple[str, ...]
    estimates: np.ndarray
    iterations: int | None = None
    gradient_norm: float | None = None
    converged: bool = True

    def __post_init__(self):
        est = np.asarray(self.estimates, dtype=np.float64)
        if est.shape != (len(self.names),):
            raise DimensionMismatchError("estimate count must match column names")
        object.__setattr__(self, "estimates", est)

    def as_dict(self) -> dict[str, float]:
        return {name: float(v) for name, v in zip(self.names, self.estimates)}

    def __getitem__(self, name: str) -> float:
        return float(self.estimates[self.names.index(name)])


@dataclass(frozen=True)
class MahalanobisBalance:
    pairwise: dict[tuple[int, int], float]
    mean: float


def _pooled_covariance(covariates: CovariateSet, partition: Partition) -> np.ndarray:
    scatter = np.zeros((covariates.p, covariates.p))
    for idx in partition.members():
        if idx.size < 2:
            raise ConfigError("each group needs at least 2 units for pooled covariance")
        rows = covariates.values[idx]
        centered = rows - rows.mean(axis=0)
        scatter += centered.T @ centered
    return scatter / (covariates.n - partition.group_count)


def mahalanobis_balance(
    covariates: CovariateSet,
    partition: Partition,
    shrinkage_fallback: bool = False,
) -> MahalanobisBalance:
    """Scaled whitened distance between group means, for every group pair.

    Each pair (a, b) contributes ``na*nb/(na+nb) * d' S^-1 d`` with d the mean
    difference and S the pooled within-group covariance. A singular S raises
    unless ``shrinkage_fallback`` blends in a scaled identity.
    """
    if partition.n != covariates.n:
        raise DimensionMismatchError("partition length does not match covariates")
    pooled = _pooled_covariance(covariates, partition)
    eigvals = np.linalg.eigvalsh(pooled)
    floor = 1e-10 * max(np.trace(pooled) / covariates.p, np.finfo(float).tiny)
    if eigvals[0] < floor:
        if not shrinkage_fallback:
            raise DegenerateDataError(
                "pooled covariance is singular; enable shrinkage_fallback"
            )
        target = np.trace(pooled) / covariates.p
        weight = (floor - eigvals[0]) / (target - eigvals[0])
        pooled = (1 - weight) * pooled + weight * target * np.eye(covariates.p)
    members = partition.members()
    means = [covariates.values[idx].mean(axis=0) for idx in members]
    sizes = [idx.size for idx in members]
    pairwise: dict[tuple[int, int], float] = {}
    for a in range(partition.group_count):
        for b in range(a + 1, partition.group_count):
            diff = means[a] - means[b]
            scale = sizes[a] * sizes[b] / (sizes[a] + sizes[b])
            pairwise[(a + 1, b + 1)] = float(
                scale * diff @ np.linalg.solve(pooled, diff)
            )
    return MahalanobisBalance(pairwise, float(np.mean(list(pairwise.values()))))


def _two_group_means(
    spec: LinearModelSpec, covariates: CovariateSet, partition: Partition
) -> tuple[np.ndarray, np.ndarray]:
    if partition.group_count != 2:
        raise ConfigError("closed-form MSEs are defined for 2 groups")
    sizes = partition.sizes
    if sizes[0] != sizes[1]:
        raise ConfigError("closed-form MSEs require equal group sizes")
    basis = spec.basis_matrix(covariates)
    idx_a, idx_b = partition.members()
    return basis[idx_a].mean(axis=0), basis[idx_b].mean(axis=0)


def mse_difference_in_mean(
    spec: LinearModelSpec, covariates: CovariateSet, partition: Partition
) -> float:
    """Exact MSE of the half-difference of group response means.

    Quarter of the squared gap between the groups' average modeled surfaces,
    plus the noise floor ``sd^2 / n``.
    """
    mean_a, mean_b = _two_group_means(spec, covariates, partition)
    bias = float((mean_a - mean_b) @ spec.coefficients)
    return 0.25 * bias * bias + spec.noise_sd**2 / covariates.n


def mse_least_squares(
    spec: LinearModelSpec, covariates: CovariateSet, partition: Partition
) -> tuple[float, float]:
    """Exact MSE of the least-squares treatment estimate, and the summed
    MSE of all coefficients, for the +-1-coded two-group design."""
    mean_a, mean_b = _two_group_means(spec, covariates, partition)
    n = covariates.n
    basis = spec.basis_matrix(covariates)
    gap = mean_a - mean_b
    gram = basis.T @ basis
    x_col = np.where(partition.groups == 1, 1.0, -1.0)
    design = np.column_stack([x_col, basis])
    names = ("treatment", *(b.name for b in spec.basis))
    xtx = design.T @ design
    _check_full_rank(design, names)
    quad = float(gap @ np.linalg.solve(gram, gap))
    sigma2 = spec.noise_sd**2
    mse_alpha = sigma2 / (n - 0.25 * n * n * quad)
    sum_mse_theta = sigma2 * float(np.trace(np.linalg.inv(xtx)))
    return mse_alpha, sum_mse_theta


def _check_full_rank(design: np.ndarray, names: Sequence[str]) -> None:
    rank = np.linalg.matrix_rank(design)
    if rank < design.shape[1]:
        from scipy.linalg import qr

        _, _, pivots = qr(design, mode="economic", pivoting=True)
        offenders = tuple(sorted(names[i] for i in pivots[rank:]))
        raise RankDeficiencyError(
            f"design matrix is rank deficient; dependent columns: {offenders}",
            columns=offenders,
        )


def fit_ols(
    design_matrix: np.ndarray,
    responses: np.ndarray,
    names: Sequence[str] | None = None,
) -> FitResult:
    """Least squares fit; raises on rank deficiency, naming the columns."""
    design = np.asarray(design_matrix, dtype=np.float64)
    y = np.asarray(responses, dtype=np.float64)
    if design.ndim != 2 or y.shape != (design.shape[0],):
        raise DimensionMismatchError("design must be (n, k) and responses (n,)")
    if design.shape[1] > design.shape[0]:
        raise ConfigError("more columns than rows")
    names = tuple(names) if names is not None else tuple(
        f"x{j}" for j in range(design.shape[1])
    )
    _check_full_rank(design, names)
    estimates, *_ = np.linalg.lstsq(design, y, rcond=None)
    return FitResult(names, estimates)


def fit_logistic(
    design_matrix: np.ndarray,
    binary_responses: np.ndarray,
    names: Sequence[str] | None = None,
) -> FitResult:
    """Logistic MLE by iteratively reweighted least squares.

    Converged when the score's max-norm drops to 1e-8, capped at 100
    iterations (reported, not raised). A coefficient max-norm above 1e3
    raises ``SeparationError``: the classes are (quasi-)separated and the
    MLE is off to infinity.
    """
    design = np.asarray(design_matrix, dtype=np.float64)
    y = np.asarray(binary_responses, dtype=np.float64)
    if design.ndim != 2 or y.shape != (design.shape[0],):
        raise DimensionMismatchError("design must be (n, k) and responses (n,)")
    if design.shape[1] > design.shape[0]:
        raise ConfigError("more columns than rows")
    if not np.all((y == 0) | (y == 1)):
        raise ConfigError("responses must be 0/1")
    names = tuple(names) if names is not None else tuple(
        f"x{j}" for j in range(design.shape[1])
    )
    theta = np.zeros(design.shape[1])
    gradient_norm = np.inf
    for iteration in range(1, LOGISTIC_MAX_ITER + 1):
        eta = design @ theta
        prob = expit(eta)
        gradient = design.T @ (y - prob)
        gradient_norm = float(np.abs(gradient).max())
        if gradient_norm <= LOGISTIC_GRADIENT_TOL:
            margins = (2.0 * y - 1.0) * eta
            if float(margins.min()) > SEPARATION_MARGIN:
                raise SeparationError(
                    "every response is classified with a saturated margin: "
                    "complete separation, no finite estimate exists"
                )
            return FitResult(names, theta, iteration - 1, gradient_norm, True)
        weights = np.maximum(prob * (1.0 - prob), 1e-300)
        hessian = design.T @ (design * weights[:, None])
        try:
            step = np.linalg.solve(hessian, gradient)
        except np.linalg.LinAlgError as err:
            raise SeparationError(
                "singular curvature in the logistic fit (separated or collinear data)"
            ) from err
        theta = theta + step
        if float(np.abs(theta).max()) > SEPARATION_NORM:
            raise SeparationError(
                f"coefficient norm exceeded {SEPARATION_NORM:g}: complete or "
                "quasi-complete separation"
            )
    return FitResult(names, theta, LOGISTIC_MAX_ITER, gradient_norm, False)


def diff_in_mean_estimates(
    responses: np.ndarray,
    partition: Partition,
    reference_group: int | None = None,
    mode: str = "half_difference",
) -> float | dict[int, float]:
    """Response-mean contrasts between groups.

    ``half_difference`` (2 groups): half the gap between group means.
    ``versus_reference``: each non-reference group's mean minus the
    reference group's mean, keyed by group label.
    """
    y = np.asarray(responses, dtype=np.float64)
    if y.shape != (partition.n,):
        raise DimensionMismatchError("responses must align with the partition")
    means = {
        l + 1: float(y[idx].mean()) for l, idx in enumerate(partition.members())
    }
    if mode == "half_difference":
        if partition.group_count != 2:
            raise ConfigError("half_difference mode needs exactly 2 groups")
        return 0.5 * (means[1] - means[2])
    if mode == "versus_reference":
        if reference_group is None or reference_group not in means:
            raise ConfigError("versus_reference mode needs a valid reference group")
        return {
            l: means[l] - means[reference_group] for l in means if l != reference_group
        }
    raise ConfigError(f"unknown mode {mode!r}")


@dataclass(frozen=True, eq=False)
class LogisticModelSpec:
    """True logistic response model: intercept, treatment effects, slopes."""

    intercept: float
    treatment_effects: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "treatment_effects", np.asarray(self.treatment_effects, dtype=np.float64)
        )
        object.__setattr__(
            self, "coefficients", np.asarray(self.coefficients, dtype=np.float64)
        )

    @property
    def group_count(self) -> int:
        return self.treatment_effects.size + 1


def treatment_encoding(group_count: int, level: int) -> tuple[int, ...]:
    """The +-1 dummy vector (length L-1) for one treatment level."""
    if not 1 <= level <= group_count:
        raise ConfigError(f"level must lie in 1..{group_count}")
    return tuple(1 if level == k else -1 for k in range(1, group_count))


def marginal_probability(
    spec: LogisticModelSpec,
    covariates: CovariateSet,
    encoding: Sequence[int],
) -> float:
    """Average response probability had every unit received one treatment."""
    encoding = np.asarray(encoding, dtype=np.float64)
    if encoding.shape != (spec.treatment_effects.size,):
        raise DimensionMismatchError(
            f"encoding length {encoding.size} != level count - 1 "
            f"({spec.treatment_effects.size})"
        )
    if covariates.p != spec.coefficients.size:
        raise DimensionMismatchError("covariate dimension does not match coefficients")
    eta = (
        spec.intercept
        + float(spec.treatment_effects @ encoding)
        + covariates.values @ spec.coefficients
    )
    return float(expit(eta).mean())
