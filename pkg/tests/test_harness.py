import numpy as np
import pytest

from fedstat import engine, harness, schedules
from fedstat.harness import (
    ExperimentConfig,
    convergence_curve,
    parse_config_text,
    partial_sum_process,
    rounds_for_target,
    run_experiment,
)

BASE_CONFIG = """
# linear coverage experiment
model = linear
dimension = 3
clients = 4
heterogeneity = on
schedule = constant
schedule_base = 1
gamma0 = 0.5
alpha = 0.505
warmup_fraction = 0.05
target_observations = 400
replications = 6
seed = 11
methods = plugin,rscale
alpha_level = 0.05
coordinate = 0
"""


def quadratic_config(**overrides):
    kwargs = dict(
        model="quadratic",
        dimension=2,
        clients=3,
        heterogeneity=True,
        schedule=schedules.CommunicationSchedule("constant", base=2, gamma0=0.6, alpha=0.6),
        rounds=25,
        target_observations=None,
        replications=4,
        seed=5,
        methods=("plugin", "rscale"),
        x0="optimum",
    )
    kwargs.update(overrides)
    return ExperimentConfig(**kwargs)


class TestConfigParsing:
    def test_full_roundtrip(self):
        config = parse_config_text(BASE_CONFIG)
        assert config.model == "linear"
        assert config.dimension == 3
        assert config.schedule.kind == "constant"
        assert config.schedule.warmup_fraction == 0.05
        assert config.target_observations == 400
        assert config.methods == ("plugin", "rscale")

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            parse_config_text("model = linear\nbogus = 1\n")

    def test_malformed_line_rejected(self):
        with pytest.raises(ValueError, match="key = value"):
            parse_config_text("model linear\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            parse_config_text("seed = 1\nseed = 2\n")

    def test_logistic_heterogeneity_rejected(self):
        text = "model = logistic\nheterogeneity = on\nrounds = 10\n"
        with pytest.raises(ValueError, match="heterogeneity"):
            parse_config_text(text)

    def test_exactly_one_run_length(self):
        with pytest.raises(ValueError, match="exactly one"):
            ExperimentConfig(rounds=10, target_observations=100)

    def test_x0_vector(self):
        config = parse_config_text("model = linear\ndimension = 2\nrounds = 5\nx0 = 0.5,-1\n")
        assert config.x0 == (0.5, -1.0)


class TestRoundsForTarget:
    def test_exact_hit(self):
        sched = schedules.CommunicationSchedule("constant", base=5)
        assert rounds_for_target(sched, 100) == 20

    def test_first_crossing(self):
        sched = schedules.CommunicationSchedule("power", base=1, exponent=0.5)
        t = rounds_for_target(sched, 500)
        total = schedules.diagnostics(sched, t).t_T
        before = schedules.diagnostics(sched, t - 1).t_T
        assert total >= 500 > before

    def test_with_warmup(self):
        sched = schedules.CommunicationSchedule("constant", base=5, warmup_fraction=0.05)
        t = rounds_for_target(sched, 10000)
        assert t == 2400  # 500 warm-up rounds + 1900 rounds of five steps


class TestBuildFederation:
    def test_logistic_optimum_equispaced(self):
        config = ExperimentConfig(
            model="logistic", dimension=5, clients=3, heterogeneity=False, rounds=10,
            target_observations=None, replications=1,
        )
        fed = harness.build_federation(config)
        np.testing.assert_allclose(fed.global_optimum, [0.0, 0.25, 0.5, 0.75, 1.0])

    def test_homogeneous_linear_shares_optimum(self):
        config = ExperimentConfig(
            model="linear", dimension=3, clients=4, heterogeneity=False, rounds=10,
            target_observations=None, replications=1,
        )
        fed = harness.build_federation(config)
        for client in fed.clients:
            np.testing.assert_array_equal(client.local_optimum, fed.clients[0].local_optimum)

    def test_same_seed_same_federation(self):
        config = parse_config_text(BASE_CONFIG)
        a = harness.build_federation(config)
        b = harness.build_federation(config)
        np.testing.assert_array_equal(a.global_optimum, b.global_optimum)


class TestRunExperiment:
    def test_noiseless_quadratic_degenerate_coverage(self):
        report = run_experiment(quadratic_config())
        for summary in report.methods:
            assert summary.coverage == 1.0
            assert summary.mean_length == 0.0
            assert summary.failures == 0

    def test_failures_counted_and_excluded(self):
        # Two rounds cannot identify a 3x3 Hessian: every plugin rep fails.
        config = quadratic_config(
            model="linear", dimension=3, clients=2, rounds=2,
            schedule=schedules.CommunicationSchedule("constant", base=1),
            methods=("plugin", "rscale"), x0="zeros", replications=3,
        )
        report = run_experiment(config)
        plugin = report.methods[0]
        assert plugin.failures == 3
        assert np.isnan(plugin.coverage)
        rscale = report.methods[1]
        assert rscale.failures == 0

    def test_reproducible_report_across_workers(self, tmp_path):
        config = parse_config_text(BASE_CONFIG)
        out_a, out_b, out_c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        run_experiment(config, workers=1, out_dir=out_a)
        run_experiment(config, workers=1, out_dir=out_b)
        run_experiment(config, workers=2, out_dir=out_c)
        report_a = (out_a / "report.csv").read_bytes()
        assert report_a == (out_b / "report.csv").read_bytes()
        assert report_a == (out_c / "report.csv").read_bytes()
        reps_a = (out_a / "replications.csv").read_bytes()
        assert reps_a == (out_c / "replications.csv").read_bytes()

    def test_report_fields_match_diagnostics(self):
        config = parse_config_text(BASE_CONFIG)
        report = run_experiment(config)
        diag = schedules.diagnostics(config.schedule, report.rounds)
        assert report.acf == diag.acf
        assert report.nu_hat == diag.nu_hat
        assert report.t_T == diag.t_T

    def test_csv_shape(self, tmp_path):
        config = quadratic_config()
        run_experiment(config, out_dir=tmp_path, dump_paths=2)
        lines = (tmp_path / "report.csv").read_text().strip().splitlines()
        assert lines[0] == (
            "method,schedule,t_T,coverage,coverage_se,mean_len,len_sd,acf,nu_hat,failures"
        )
        assert len(lines) == 3
        rep_lines = (tmp_path / "replications.csv").read_text().strip().splitlines()
        assert len(rep_lines) == 1 + config.replications * len(config.methods)
        dumped = sorted(p.name for p in (tmp_path / "paths").iterdir())
        assert dumped == ["rep_0000.csv", "rep_0001.csv"]

    def test_coverage_se_formula(self):
        config = parse_config_text(BASE_CONFIG)
        report = run_experiment(config)
        for summary in report.methods:
            p = summary.coverage
            assert summary.coverage_se == pytest.approx(
                np.sqrt(p * (1 - p) / config.replications)
            )


class TestConvergenceCurve:
    def test_error_decreases_with_rounds(self):
        config = ExperimentConfig(
            model="linear", dimension=2, clients=5, heterogeneity=True,
            schedule=schedules.CommunicationSchedule("constant", base=1),
            rounds=None, target_observations=800, replications=30, seed=3,
        )
        rows = convergence_curve(config, [50, 200, 800])
        errors = [err for _, err, _ in rows]
        assert errors[0] > errors[1] > errors[2]

    def test_faster_interval_growth_wins_at_equal_rounds(self):
        base = dict(
            model="linear", dimension=2, clients=5, heterogeneity=True,
            rounds=500, target_observations=None, replications=30, seed=3,
        )
        slow = ExperimentConfig(
            schedule=schedules.CommunicationSchedule("constant", base=1), **base
        )
        fast = ExperimentConfig(
            schedule=schedules.CommunicationSchedule("power", base=1, exponent=0.5), **base
        )
        err_slow = convergence_curve(slow, [500])[0][1]
        err_fast = convergence_curve(fast, [500])[0][1]
        assert err_fast < err_slow

    def test_single_checkpoint(self):
        config = quadratic_config(replications=2)
        rows = convergence_curve(config, [25])
        assert len(rows) == 1
        assert rows[0][0] == 25

    def test_checkpoints_must_increase(self):
        with pytest.raises(ValueError):
            convergence_curve(quadratic_config(), [10, 10])


class TestPartialSumProcess:
    def test_full_budget_matches_scaled_average(self):
        rng = np.random.default_rng(0)
        points = rng.standard_normal((40, 2))
        path = engine.SyncPath(
            points=points, comm_times=np.arange(1, 41), total_iterations=40
        )
        sched = schedules.CommunicationSchedule("constant", base=1)
        x_star = np.array([0.5, -0.5])
        phi = partial_sum_process(path, sched, x_star, [1.0])
        expected = np.sqrt(40) * (points.mean(axis=0) - x_star)
        np.testing.assert_allclose(phi[0], expected, rtol=1e-12)

    def test_constant_path_at_optimum_vanishes(self):
        x_star = np.array([1.0, 2.0])
        path = engine.SyncPath(
            points=np.tile(x_star, (10, 1)),
            comm_times=np.arange(1, 11),
            total_iterations=10,
        )
        sched = schedules.CommunicationSchedule("constant", base=1)
        phi = partial_sum_process(path, sched, x_star, [0.25, 0.5, 1.0])
        np.testing.assert_array_equal(phi, np.zeros((3, 2)))

    def test_grid_prefix_sums(self):
        points = np.arange(8.0)[:, None]
        path = engine.SyncPath(
            points=points, comm_times=np.arange(1, 9), total_iterations=8
        )
        sched = schedules.CommunicationSchedule("constant", base=1)
        phi = partial_sum_process(path, sched, np.zeros(1), [0.5])
        # h(0.5, 8) = 4 -> sum of first four points, scaled by sqrt(8)/8
        assert phi[0, 0] == pytest.approx(np.sqrt(8) / 8 * points[:4].sum())
