"""Synthetic comparison lab: generators, response models, replicate runner.

Four scenarios are built in. ``case1``/``case2`` draw five covariates from
the documented mixtures and score designs under a linear response model
(``case2`` adds squares and interactions). ``logistic`` drops the fifth
covariate and scores binary-response estimators. ``highdim`` draws 48
correlated normal covariates organized in blocks with a geometrically
decaying spectrum and exercises the PCA reduction path.

Each replicate generates fresh covariates and coefficients, produces a
randomized design and an optimized design on the same data, and records the
applicable metrics for both. Everything is reproducible from the scenario
seed; replicate r uses an independent stream derived from (seed, r).
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .bandwidth import BandwidthState
from .data import CovariateSet, Partition
from .errors import ConfigError
from .ga import GaConfig, optimize
from .kernel import KernelGram, compute_gram, criterion
from .metrics import (
    LinearModelSpec,
    LogisticModelSpec,
    SeparationError,
    diff_in_mean_estimates,
    extended_basis,
    fit_logistic,
    linear_basis,
    mahalanobis_balance,
    marginal_probability,
    mse_difference_in_mean,
    mse_least_squares,
    treatment_encoding,
)
from .online import admissible_profiles, assign_batch, init_online
from .pca import PcaTarget, fit_pca, transform

SCENARIOS = ("case1", "case2", "logistic", "highdim")
SCENARIO_DIMS = {"case1": 5, "case2": 5, "logistic": 4, "highdim": 48}

REPORT_SCHEMA_VERSION = 1

# Default GA budget for replicated comparisons; smaller than the library
# default because 30-replicate runs must stay interactive.
LAB_GA = dict(population_size=60, elite_count=12, max_generations=150)
LAB_GA_ONLINE = dict(population_size=60, elite_count=12, max_generations=100)


def random_pd_matrix(
    k: int, eig_low: float, eig_high: float, rng: np.random.Generator
) -> np.ndarray:
    """Random SPD matrix: QR-orthogonal eigenvectors, uniform eigenvalues."""
    if not 0 < eig_low <= eig_high:
        raise ConfigError("eigenvalue bounds must satisfy 0 < low <= high")
    q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    eigvals = rng.uniform(eig_low, eig_high, size=k)
    matrix = (q * eigvals) @ q.T
    return (matrix + matrix.T) / 2.0


@dataclass(frozen=True)
class OnlineOptions:
    """Streaming layout: size of the random first batch, then fixed batches."""

    initial_size: int = 40
    batch_size: int = 20

    def __post_init__(self):
        if self.initial_size < 2 or self.batch_size < 1:
            raise ConfigError("initial_size must be >= 2 and batch_size >= 1")


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    group_count: int = 2
    sample_size: int = 200
    replicates: int = 30
    noise_sd: float = 1.0
    treatment_effect: float = 2.0
    seed: int = 0
    ga: GaConfig | None = None
    online: OnlineOptions | None = None
    pd_eig_low: float = 0.5
    pd_eig_high: float = 2.0
    pca_fraction: float = 0.8

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.group_count < 2:
            raise ConfigError("group_count must be >= 2")
        if self.online is not None and self.scenario in ("logistic", "highdim"):
            raise ConfigError("online mode is supported for case1/case2 scenarios")
        if self.online is not None and self.online.initial_size >= self.sample_size:
            raise ConfigError("initial_size must be smaller than sample_size")

    @property
    def p(self) -> int:
        return SCENARIO_DIMS[self.scenario]

    def ga_config(self, online: bool = False) -> GaConfig:
        if self.ga is not None:
            return self.ga
        return GaConfig(**(LAB_GA_ONLINE if online else LAB_GA))


def _mixture_column(
    rng: np.random.Generator, n: int, weights, samplers
) -> np.ndarray:
    """Stack exact-proportion component draws, then shuffle the rows."""
    counts = [int(round(w * n)) for w in weights[:-1]]
    counts.append(n - sum(counts))
    parts = [sampler(count) for sampler, count in zip(samplers, counts)]
    column = np.concatenate(parts)
    return column[rng.permutation(n)]


def gen_covariates(
    scenario: str,
    n: int,
    rng: np.random.Generator,
    eig_low: float = 0.5,
    eig_high: float = 2.0,
) -> CovariateSet:
    """Covariate draw for one replicate of the given scenario."""
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
    if scenario == "highdim":
        return _gen_highdim(n, rng)
    sigma = random_pd_matrix(2, eig_low, eig_high, rng)
    chol = np.linalg.cholesky(sigma)

    def normal_pair(mean):
        return lambda count: mean + rng.standard_normal((count, 2)) @ chol.T

    n_first = int(round(0.7 * n))
    pair = np.vstack(
        [normal_pair(np.full(2, -3.0))(n_first), normal_pair(np.full(2, 5.0))(n - n_first)]
    )
    pair = pair[rng.permutation(n)]
    z3 = _mixture_column(
        rng,
        n,
        (0.4, 0.6),
        (
            lambda c: rng.uniform(-0.5, 1.5, size=c),
            lambda c: rng.uniform(-3.0, 8.0, size=c),
        ),
    )
    z4 = _mixture_column(
        rng,
        n,
        (0.2, 0.8),
        (
            lambda c: rng.gamma(0.1, 1.0, size=c),
            lambda c: rng.gamma(2.5, 1.0, size=c),
        ),
    )
    columns = [pair[:, 0], pair[:, 1], z3, z4]
    if SCENARIO_DIMS[scenario] == 5:
        z5 = _mixture_column(
            rng,
            n,
            (0.3, 0.7),
            (
                lambda c: rng.normal(0.05, 1.0, size=c),
                lambda c: rng.normal(10.0, 1.0, size=c),
            ),
        )
        columns.append(z5)
    return CovariateSet.from_values(np.column_stack(columns))


HIGHDIM_BLOCKS = 6
# Geometric eigenvalue decay tuned so the top half of the spectrum carries
# 80% of the total variance (0.25 ** (1/24)).
HIGHDIM_DECAY = 0.25 ** (1.0 / 24.0)


def _gen_highdim(n: int, rng: np.random.Generator) -> CovariateSet:
    p = SCENARIO_DIMS["highdim"]
    width = p // HIGHDIM_BLOCKS
    eigvals = HIGHDIM_DECAY ** np.arange(p)
    data = np.empty((n, p))
    for b in range(HIGHDIM_BLOCKS):
        block_eigs = eigvals[b::HIGHDIM_BLOCKS]
        q, _ = np.linalg.qr(rng.standard_normal((width, width)))
        chol = np.linalg.cholesky((q * block_eigs) @ q.T + 1e-12 * np.eye(width))
        offset = rng.normal(0.0, 2.0)
        cols = slice(b * width, (b + 1) * width)
        data[:, cols] = offset + rng.standard_normal((n, width)) @ chol.T
    return CovariateSet.from_values(data)


@dataclass(frozen=True, eq=False)
class ModelCoefficients:
    """One replicate's true response-model parameters."""

    intercept: float
    treatment_effects: np.ndarray
    slopes: np.ndarray
    squares: np.ndarray | None = None
    interactions: np.ndarray | None = None


def draw_coefficients(
    scenario: str,
    group_count: int,
    rng: np.random.Generator,
    treatment_effect: float = 2.0,
) -> ModelCoefficients:
    """Coefficients ~ N(2s, 0.1) with an independent random sign s each;
    treatment effects are fixed at ``treatment_effect``."""
    p = SCENARIO_DIMS[scenario]

    def draw(count):
        signs = rng.choice((1.0, -1.0), size=count)
        return rng.normal(2.0 * signs, np.sqrt(0.1))

    intercept = float(draw(1)[0])
    slopes = draw(p)
    squares = draw(3) if scenario == "case2" else None
    inter = draw(2) if scenario == "case2" else None
    return ModelCoefficients(
        intercept=intercept,
        treatment_effects=np.full(group_count - 1, float(treatment_effect)),
        slopes=slopes,
        squares=squares,
        interactions=inter,
    )


def linear_spec(
    scenario: str, coefficients: ModelCoefficients, noise_sd: float
) -> LinearModelSpec:
    """The true linear response surface as a metrics-ready model spec."""
    if scenario == "case1":
        basis = linear_basis(SCENARIO_DIMS[scenario])
        values = np.concatenate([[coefficients.intercept], coefficients.slopes])
    elif scenario == "case2":
        basis = extended_basis()
        values = np.concatenate(
            [
                [coefficients.intercept],
                coefficients.slopes,
                coefficients.squares,
                coefficients.interactions,
            ]
        )
    else:
        raise ConfigError(f"no linear response surface for scenario {scenario!r}")
    return LinearModelSpec(
        basis=basis,
        coefficients=values,
        treatment_effects=coefficients.treatment_effects,
        noise_sd=noise_sd,
    )


def logistic_spec(coefficients: ModelCoefficients) -> LogisticModelSpec:
    return LogisticModelSpec(
        intercept=coefficients.intercept,
        treatment_effects=coefficients.treatment_effects,
        coefficients=coefficients.slopes,
    )


def _dummy_columns(treatments: np.ndarray, group_count: int) -> np.ndarray:
    """(n, L-1) matrix of +-1 treatment dummies."""
    return np.column_stack(
        [np.where(treatments == k, 1.0, -1.0) for k in range(1, group_count)]
    )


def gen_response(
    scenario: str,
    covariates: CovariateSet,
    treatments: np.ndarray,
    coefficients: ModelCoefficients,
    noise_sd: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Simulate responses for assigned treatments under the true model."""
    treatments = np.asarray(treatments, dtype=np.int64)
    if treatments.shape != (covariates.n,):
        raise ConfigError("treatments must assign every unit")
    group_count = coefficients.treatment_effects.size + 1
    dummies = _dummy_columns(treatments, group_count)
    eta = (
        coefficients.intercept
        + dummies @ coefficients.treatment_effects
        + covariates.values @ coefficients.slopes
    )
    if scenario == "case2":
        z = covariates.values
        eta = (
            eta
            + (z[:, :3] ** 2) @ coefficients.squares
            + coefficients.interactions[0] * z[:, 2] * z[:, 3]
            + coefficients.interactions[1] * z[:, 2] * z[:, 4]
        )
    if scenario == "logistic":
        return rng.binomial(1, expit(eta)).astype(np.float64)
    if noise_sd > 0:
        eta = eta + rng.normal(0.0, noise_sd, size=covariates.n)
    return eta


@dataclass(frozen=True)
class ReplicateRow:
    replicate: int
    method: str
    metric: str
    value: float


@dataclass
class Report:
    """Plot-ready comparison data: one row per replicate, method and metric."""

    config: dict
    rows: list[ReplicateRow] = field(default_factory=list)
    schema_version: int = REPORT_SCHEMA_VERSION

    def add(self, replicate: int, method: str, value_by_metric: dict[str, float]):
        for metric, value in value_by_metric.items():
            self.rows.append(ReplicateRow(replicate, method, metric, float(value)))

    def values(self, method: str, metric: str) -> np.ndarray:
        return np.array(
            [r.value for r in self.rows if r.method == method and r.metric == metric]
        )

    def median(self, method: str, metric: str) -> float:
        return float(np.nanmedian(self.values(method, metric)))

    def summary(self) -> dict:
        methods = sorted({r.method for r in self.rows})
        metrics = sorted({r.metric for r in self.rows})
        out: dict[str, dict[str, dict[str, float]]] = {}
        for method in methods:
            out[method] = {}
            for metric in metrics:
                values = self.values(method, metric)
                if values.size == 0:
                    continue
                quartiles = np.nanpercentile(values, [0, 25, 50, 75, 100])
                out[method][metric] = {
                    "min": float(quartiles[0]),
                    "q1": float(quartiles[1]),
                    "median": float(quartiles[2]),
                    "q3": float(quartiles[3]),
                    "max": float(quartiles[4]),
                }
        return out

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["replicate", "method", "metric", "value"])
            for row in self.rows:
                writer.writerow([row.replicate, row.method, row.metric, repr(row.value)])

    def to_json(self, path: str | Path) -> None:
        payload = {
            "schema_version": self.schema_version,
            "config": self.config,
            "summary": self.summary(),
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, replicate)))


def _random_treatment_map(group_count: int, rng: np.random.Generator) -> dict[int, int]:
    return {l + 1: int(t) for l, t in enumerate(rng.permutation(group_count) + 1)}


def _sequential_randomized(
    n: int,
    group_count: int,
    options: OnlineOptions,
    rng: np.random.Generator,
) -> Partition:
    """Random assignment batch by batch under the same balance constraint."""
    groups = list(
        Partition.random_balanced(options.initial_size, group_count, rng).groups
    )
    position = options.initial_size
    while position < n:
        size = min(options.batch_size, n - position)
        counts = np.bincount(np.array(groups), minlength=group_count + 1)[1:]
        profiles = admissible_profiles(tuple(int(c) for c in counts), size, "strict")
        profile = profiles[int(rng.integers(len(profiles)))]
        labels = np.repeat(np.arange(1, group_count + 1), profile)
        groups.extend(rng.permutation(labels))
        position += size
    return Partition(np.array(groups), group_count)


def _linear_metrics(
    spec: LinearModelSpec,
    covariates: CovariateSet,
    partition: Partition,
    gram: KernelGram,
    group_count: int,
) -> dict[str, float]:
    values = {"criterion": criterion(gram, partition)}
    balance = mahalanobis_balance(covariates, partition)
    if group_count == 2:
        values["mahalanobis"] = balance.mean
        values["mse_diff_in_mean"] = mse_difference_in_mean(spec, covariates, partition)
        mse_alpha, _ = mse_least_squares(spec, covariates, partition)
        values["mse_least_squares"] = mse_alpha
    else:
        values["mahalanobis_mean"] = balance.mean
    return values


def _logistic_metrics(
    spec: LogisticModelSpec,
    covariates: CovariateSet,
    partition: Partition,
    gram: KernelGram,
    treatment_map: dict[int, int],
    coefficients: ModelCoefficients,
    rng: np.random.Generator,
) -> dict[str, float]:
    group_count = partition.group_count
    treatments = np.array([treatment_map[int(g)] for g in partition.groups])
    responses = gen_response("logistic", covariates, treatments, coefficients, 0.0, rng)
    values = {"criterion": criterion(gram, partition)}
    balance = mahalanobis_balance(covariates, partition)
    values["mahalanobis" if group_count == 2 else "mahalanobis_mean"] = balance.mean

    true_marginals = {
        level: marginal_probability(spec, covariates, treatment_encoding(group_count, level))
        for level in range(1, group_count + 1)
    }
    by_treatment = Partition(treatments, group_count)
    if group_count == 2:
        contrasts = diff_in_mean_estimates(
            responses, by_treatment, reference_group=2, mode="versus_reference"
        )
        values["diff_in_mean_abs_error"] = abs(
            contrasts[1] - (true_marginals[1] - true_marginals[2])
        )
    else:
        contrasts = diff_in_mean_estimates(
            responses, by_treatment, reference_group=group_count, mode="versus_reference"
        )
        values["diff_in_mean_abs_error"] = sum(
            abs(contrasts[l] - (true_marginals[l] - true_marginals[group_count]))
            for l in range(1, group_count)
        )

    dummies = _dummy_columns(treatments, group_count)
    design = np.column_stack(
        [np.ones(covariates.n), dummies, covariates.values]
    )
    names = (
        "intercept",
        *(f"treatment{k}" for k in range(1, group_count)),
        *(f"z{j + 1}" for j in range(covariates.p)),
    )
    try:
        fit = fit_logistic(design, responses, names)
        errors = [
            (fit[f"treatment{k}"] - coefficients.treatment_effects[k - 1]) ** 2
            for k in range(1, group_count)
        ]
        values["glm_squared_error"] = float(sum(errors))
    except SeparationError:
        values["glm_squared_error"] = float("nan")
    return values


def run_comparison(config: ScenarioConfig) -> Report:
    """Randomized vs optimized designs over fresh replicates.

    Third-party design baselines can be appended to the report as extra
    methods; only the two built-in ones are produced here.
    """
    echo = asdict(config)
    echo["ga"] = asdict(config.ga_config(online=config.online is not None))
    report = Report(config=echo)
    for replicate in range(config.replicates):
        rng = _replicate_rng(config.seed, replicate)
        coefficients = draw_coefficients(
            config.scenario, config.group_count, rng, config.treatment_effect
        )
        covariates = gen_covariates(
            config.scenario, config.sample_size, rng, config.pd_eig_low, config.pd_eig_high
        )

        if config.scenario == "highdim":
            reducer = fit_pca(covariates, PcaTarget.fraction(config.pca_fraction))
            coords = transform(reducer, covariates)
        else:
            coords = covariates
        bandwidth = BandwidthState.from_data(coords)
        gram = compute_gram(coords, bandwidth)

        if config.online is not None:
            optimized = _run_online(config, covariates, gram, rng)
            randomized = _sequential_randomized(
                config.sample_size, config.group_count, config.online, rng
            )
        else:
            randomized = Partition.random_balanced(
                config.sample_size, config.group_count, rng
            )
            optimized = optimize(
                gram, config.group_count, config.ga_config(), rng=rng
            ).partition

        treatment_map = _random_treatment_map(config.group_count, rng)
        for method, partition in (("randomized", randomized), ("optimized", optimized)):
            if config.scenario == "logistic":
                spec = logistic_spec(coefficients)
                values = _logistic_metrics(
                    spec,
                    covariates,
                    partition,
                    gram,
                    treatment_map,
                    coefficients,
                    rng,
                )
            elif config.scenario == "highdim":
                values = {"criterion": criterion(gram, partition)}
                balance = mahalanobis_balance(covariates, partition)
                key = "mahalanobis" if config.group_count == 2 else "mahalanobis_mean"
                values[key] = balance.mean
            else:
                spec = linear_spec(config.scenario, coefficients, config.noise_sd)
                values = _linear_metrics(
                    spec, covariates, partition, gram, config.group_count
                )
            report.add(replicate, method, values)
    return report


def _run_online(
    config: ScenarioConfig,
    covariates: CovariateSet,
    final_gram: KernelGram,
    rng: np.random.Generator,
) -> Partition:
    """Stream the units through the online assigner; returns the final partition."""
    options = config.online
    first = covariates.select(np.arange(options.initial_size))
    state, _ = init_online(
        first, config.group_count, config.ga_config(online=True), rng
    )
    position = options.initial_size
    while position < covariates.n:
        stop = min(position + options.batch_size, covariates.n)
        state, _ = assign_batch(state, covariates.select(np.arange(position, stop)))
        position = stop
    return state.partition
