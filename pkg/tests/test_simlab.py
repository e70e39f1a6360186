import numpy as np
import pytest
from scipy import stats

from covbalance import Partition
from covbalance.errors import ConfigError
from covbalance.simlab import (
    OnlineOptions,
    ScenarioConfig,
    draw_coefficients,
    gen_covariates,
    gen_response,
    linear_spec,
    logistic_spec,
    random_pd_matrix,
    run_comparison,
)


class TestRandomPdMatrix:
    def test_one_by_one_degenerate_interval(self, rng):
        out = random_pd_matrix(1, 2.0, 2.0, rng)
        assert out.shape == (1, 1)
        assert out[0, 0] == pytest.approx(2.0, rel=1e-12)

    def test_symmetry_and_eigenvalue_bounds(self, rng):
        for _ in range(50):
            out = random_pd_matrix(4, 0.3, 1.7, rng)
            assert np.abs(out - out.T).max() < 1e-12
            eigvals = np.linalg.eigvalsh(out)
            assert eigvals.min() >= 0.3 - 1e-10
            assert eigvals.max() <= 1.7 + 1e-10

    def test_eigenvalues_uniform(self, rng):
        draws = np.concatenate(
            [np.linalg.eigvalsh(random_pd_matrix(5, 1.0, 3.0, rng)) for _ in range(100)]
        )
        result = stats.kstest(draws, stats.uniform(loc=1.0, scale=2.0).cdf)
        assert result.pvalue > 0.01

    def test_invalid_bounds(self, rng):
        with pytest.raises(ConfigError):
            random_pd_matrix(3, 0.0, 1.0, rng)
        with pytest.raises(ConfigError):
            random_pd_matrix(3, 2.0, 1.0, rng)


class TestGenCovariates:
    def test_dimensions_per_scenario(self, rng):
        assert gen_covariates("case1", 40, rng).p == 5
        assert gen_covariates("case2", 40, rng).p == 5
        assert gen_covariates("logistic", 40, rng).p == 4
        assert gen_covariates("highdim", 40, rng).p == 48

    def test_fifth_covariate_mixture_mean(self, rng):
        data = gen_covariates("case1", 100_000, rng)
        # 0.3 * 0.05 + 0.7 * 10 = 7.015
        assert data.values[:, 4].mean() == pytest.approx(7.015, abs=0.05)

    def test_third_covariate_support(self, rng):
        data = gen_covariates("case1", 50_000, rng)
        z3 = data.values[:, 2]
        assert z3.min() >= -3.0 and z3.max() <= 8.0

    def test_mixture_proportions(self, rng):
        data = gen_covariates("case1", 100_000, rng)
        # z5 components N(0.05, 1) and N(10, 1) are separated at 5
        high = (data.values[:, 4] > 5.0).mean()
        assert high == pytest.approx(0.7, abs=0.01)
        # z1 mixture of N(-3, .) (70%) and N(5, .) (30%), separated at 1
        low = (data.values[:, 0] < 1.0).mean()
        assert low == pytest.approx(0.7, abs=0.01)

    def test_fourth_covariate_nonnegative(self, rng):
        data = gen_covariates("logistic", 20_000, rng)
        assert data.values[:, 3].min() >= 0.0  # gamma mixture

    def test_unknown_scenario(self, rng):
        with pytest.raises(ConfigError, match="unknown scenario"):
            gen_covariates("case3", 10, rng)

    def test_highdim_spectrum_top_half(self, rng):
        data = gen_covariates("highdim", 4000, rng)
        eigvals = np.sort(np.linalg.eigvalsh(np.cov(data.values.T)))[::-1]
        top_fraction = eigvals[:24].sum() / eigvals.sum()
        assert 0.7 < top_fraction < 0.9


class TestGenResponse:
    def test_pure_treatment_signal(self, rng):
        data = gen_covariates("case1", 20, rng)
        coeffs = draw_coefficients("case1", 2, rng)
        object.__setattr__(coeffs, "intercept", 0.0)
        object.__setattr__(coeffs, "slopes", np.zeros(5))
        treatments = Partition.random_balanced(20, 2, rng).groups
        y = gen_response("case1", data, treatments, coeffs, 0.0, rng)
        np.testing.assert_allclose(y, np.where(treatments == 1, 2.0, -2.0))

    def test_logistic_saturates_to_zero(self, rng):
        data = gen_covariates("logistic", 200, rng)
        coeffs = draw_coefficients("logistic", 2, rng)
        object.__setattr__(coeffs, "intercept", -1e4)
        object.__setattr__(coeffs, "slopes", np.zeros(4))
        object.__setattr__(coeffs, "treatment_effects", np.zeros(1))
        treatments = np.ones(200, dtype=int)
        y = gen_response("logistic", data, treatments, coeffs, 0.0, rng)
        assert y.sum() == 0

    def test_case1_moment_oracle(self, rng):
        n = 100_000
        data = gen_covariates("case1", n, rng)
        coeffs = draw_coefficients("case1", 2, rng)
        treatments = np.ones(n, dtype=int)
        y = gen_response("case1", data, treatments, coeffs, 1.0, rng)
        expected = (
            coeffs.intercept
            + coeffs.treatment_effects[0]
            + data.values.mean(axis=0) @ coeffs.slopes
        )
        assert y.mean() == pytest.approx(expected, abs=3.5 / np.sqrt(n) * 30)

    def test_case2_includes_interactions(self, rng):
        data = gen_covariates("case2", 50, rng)
        coeffs = draw_coefficients("case2", 2, rng)
        treatments = np.ones(50, dtype=int)
        y = gen_response("case2", data, treatments, coeffs, 0.0, rng)
        spec = linear_spec("case2", coeffs, 1.0)
        expected = spec.surface(data) + coeffs.treatment_effects[0]
        np.testing.assert_allclose(y, expected, rtol=1e-10)

    def test_coefficient_law(self, rng):
        draws = np.array(
            [draw_coefficients("case1", 2, rng).slopes for _ in range(500)]
        ).ravel()
        assert np.abs(draws).mean() == pytest.approx(2.0, abs=0.05)
        assert (draws > 0).mean() == pytest.approx(0.5, abs=0.05)
        assert draws.std() > 0.25  # sd sqrt(0.1) around +-2 plus sign mixing


class TestRunComparison:
    def small_config(self, **overrides):
        from covbalance import GaConfig

        defaults = dict(
            scenario="case1",
            group_count=2,
            sample_size=24,
            replicates=2,
            seed=5,
            ga=GaConfig(population_size=12, elite_count=4, max_generations=10),
        )
        defaults.update(overrides)
        return ScenarioConfig(**defaults)

    def test_report_shape_and_determinism(self):
        report = run_comparison(self.small_config())
        again = run_comparison(self.small_config())
        assert [
            (r.replicate, r.method, r.metric, r.value) for r in report.rows
        ] == [(r.replicate, r.method, r.metric, r.value) for r in again.rows]
        metrics = {r.metric for r in report.rows}
        assert metrics == {
            "criterion",
            "mahalanobis",
            "mse_diff_in_mean",
            "mse_least_squares",
        }
        methods = {r.method for r in report.rows}
        assert methods == {"randomized", "optimized"}

    def test_optimized_beats_randomized_criterion(self):
        report = run_comparison(self.small_config(replicates=3))
        for replicate in range(3):
            opt = [
                r.value
                for r in report.rows
                if r.replicate == replicate
                and r.method == "optimized"
                and r.metric == "criterion"
            ][0]
            rand = [
                r.value
                for r in report.rows
                if r.replicate == replicate
                and r.method == "randomized"
                and r.metric == "criterion"
            ][0]
            assert opt <= rand

    def test_three_group_metrics(self):
        report = run_comparison(
            self.small_config(group_count=3, sample_size=27, replicates=1)
        )
        assert {r.metric for r in report.rows} == {"criterion", "mahalanobis_mean"}

    def test_logistic_metrics(self):
        report = run_comparison(
            self.small_config(scenario="logistic", sample_size=40, replicates=1)
        )
        assert {r.metric for r in report.rows} == {
            "criterion",
            "mahalanobis",
            "diff_in_mean_abs_error",
            "glm_squared_error",
        }

    def test_online_mode_runs_balanced(self):
        report = run_comparison(
            self.small_config(
                sample_size=30,
                replicates=1,
                online=OnlineOptions(initial_size=10, batch_size=10),
            )
        )
        assert {r.method for r in report.rows} == {"randomized", "optimized"}

    def test_online_rejected_for_logistic(self):
        with pytest.raises(ConfigError):
            self.small_config(
                scenario="logistic", online=OnlineOptions(initial_size=10, batch_size=5)
            )

    def test_replicates_reproducible_by_index(self):
        # replicate r's stream derives from (seed, r): a shorter run is a
        # strict prefix of a longer one
        short = run_comparison(self.small_config(replicates=2))
        long = run_comparison(self.small_config(replicates=4))
        short_rows = [(r.replicate, r.method, r.metric, r.value) for r in short.rows]
        long_rows = [(r.replicate, r.method, r.metric, r.value) for r in long.rows]
        assert short_rows == long_rows[: len(short_rows)]

    def test_single_replicate_smoke_budget(self):
        import time

        started = time.perf_counter()
        run_comparison(
            ScenarioConfig(
                scenario="case1", group_count=2, sample_size=200, replicates=1, seed=1
            )
        )
        assert time.perf_counter() - started < 60.0

    def test_csv_and_json_round_trip(self, tmp_path):
        report = run_comparison(self.small_config(replicates=1))
        csv_path = tmp_path / "rows.csv"
        json_path = tmp_path / "summary.json"
        report.to_csv(csv_path)
        report.to_json(json_path)
        import csv as csv_mod
        import json

        with open(csv_path) as handle:
            rows = list(csv_mod.DictReader(handle))
        assert len(rows) == len(report.rows)
        parsed = float(rows[0]["value"])
        assert parsed == report.rows[0].value
        summary = json.loads(json_path.read_text())
        assert summary["schema_version"] == 1
        assert "optimized" in summary["summary"]


def test_logistic_spec_round_trip(rng):
    coeffs = draw_coefficients("logistic", 3, rng)
    spec = logistic_spec(coeffs)
    assert spec.group_count == 3
    assert spec.coefficients.shape == (4,)
