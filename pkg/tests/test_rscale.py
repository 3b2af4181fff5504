import numpy as np
import pytest

from fedstat import critvals, schedules
from fedstat.rscale import RScaleObserver, RScaleState, beta_for_schedule

# Quantiles copied from the reference asymptotic table; levels are P(t* <= q).
PAPER_LEVELS = (0.01, 0.025, 0.05, 0.1, 0.5, 0.9, 0.95, 0.975, 0.99)
PAPER_ROWS = {
    0.0: (-8.634, -6.753, -5.324, -3.877, 0.0, 3.877, 5.324, 6.753, 8.634),
    0.5: (-7.386, -5.851, -4.621, -3.446, 0.0, 3.446, 4.621, 5.851, 7.386),
}


def paper_table():
    betas = tuple(PAPER_ROWS)
    values = np.array([PAPER_ROWS[b] for b in betas])
    return critvals.CriticalValueTable(
        betas=betas, levels=PAPER_LEVELS, values=values, steps=1000, replications=50000
    )


def batch_vhat(points, intervals):
    """Direct evaluation of the studentizer from the stored path."""
    points = np.asarray(points, dtype=np.float64)
    t = len(points)
    inv = 1.0 / np.asarray(intervals, dtype=np.float64)
    y_t = points.mean(axis=0)
    partial = np.cumsum(points, axis=0)
    acc = np.zeros((points.shape[1], points.shape[1]))
    for m in range(1, t + 1):
        dev = partial[m - 1] - m * y_t
        acc += inv[m - 1] * np.outer(dev, dev)
    return acc / (t**2 * inv.sum())


class TestObserve:
    def test_first_observation(self):
        state = RScaleState(2)
        x = np.array([1.0, -2.0])
        state.observe(x, 1)
        np.testing.assert_array_equal(state.y_bar, x)
        np.testing.assert_array_equal(state.A, np.outer(x, x))
        np.testing.assert_array_equal(state.b, x)
        assert state.s == 1.0 and state.q == 1.0 and state.rounds_seen == 1

    def test_two_point_path_both_forms_agree(self):
        state = RScaleState(1)
        state.observe(np.array([0.0]), 1)
        state.observe(np.array([2.0]), 1)
        v_online = state.v_hat()[0, 0]
        v_batch = batch_vhat([[0.0], [2.0]], [1, 1])[0, 0]
        assert v_online == pytest.approx(1.0 / 8.0, abs=1e-15)
        assert v_batch == pytest.approx(1.0 / 8.0, abs=1e-15)

    def test_accumulators_strictly_increasing(self):
        rng = np.random.default_rng(0)
        state = RScaleState(2)
        s_prev = q_prev = 0.0
        for m in range(1, 30):
            state.observe(rng.standard_normal(2), int(rng.integers(1, 6)))
            assert state.s > s_prev and state.q > q_prev
            s_prev, q_prev = state.s, state.q

    def test_interval_must_be_positive(self):
        with pytest.raises(ValueError):
            RScaleState(1).observe(np.zeros(1), 0)


class TestVhat:
    def test_constant_path_gives_zero(self):
        state = RScaleState(2)
        c = np.array([3.0, -1.0])
        for m in range(1, 20):
            state.observe(c, 1 + m % 3)
            np.testing.assert_allclose(state.v_hat(), np.zeros((2, 2)), atol=1e-12)

    def test_online_equals_batch_on_random_paths(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            d = int(rng.integers(1, 4))
            n = int(rng.integers(2, 80))
            points = rng.standard_normal((n, d))
            intervals = rng.integers(1, 7, size=n)
            state = RScaleState(d)
            for x, e in zip(points, intervals):
                state.observe(x, int(e))
            v_online = state.v_hat()
            v_batch = batch_vhat(points, intervals)
            denom = max(np.linalg.norm(v_batch), 1e-12)
            assert np.linalg.norm(v_online - v_batch) / denom < 1e-10

    def test_psd_on_every_prefix(self):
        rng = np.random.default_rng(9)
        state = RScaleState(3)
        for _ in range(60):
            state.observe(rng.standard_normal(3), int(rng.integers(1, 5)))
            assert np.linalg.eigvalsh(state.v_hat()).min() >= -1e-12

    def test_scale_equivariance(self):
        rng = np.random.default_rng(13)
        points = rng.standard_normal((40, 2))
        intervals = rng.integers(1, 4, size=40)
        c, shift = 2.5, np.array([0.3, -0.8])
        base, moved = RScaleState(2), RScaleState(2)
        for x, e in zip(points, intervals):
            base.observe(x, int(e))
            moved.observe(c * x + shift, int(e))
        np.testing.assert_allclose(moved.v_hat(), c**2 * base.v_hat(), rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(moved.y_bar, c * base.y_bar + shift, rtol=1e-10, atol=1e-12)

    def test_studentized_statistic_scale_invariant(self):
        # Scaling the path around the optimum leaves (y_j - x*_j)/sqrt(V_jj) fixed.
        rng = np.random.default_rng(17)
        x_star = np.array([1.0, -1.0])
        points = x_star + rng.standard_normal((30, 2))
        c = 4.0
        base, scaled = RScaleState(2), RScaleState(2)
        for x in points:
            base.observe(x, 2)
            scaled.observe(x_star + c * (x - x_star), 2)
        stat = lambda s: (s.y_bar - x_star) / np.sqrt(np.diag(s.v_hat()))
        np.testing.assert_allclose(stat(scaled), stat(base), rtol=1e-10)


class TestConfidenceInterval:
    def test_beta_zero_coefficient(self):
        state = RScaleState(1)
        state.observe(np.array([0.0]), 1)
        state.observe(np.array([2.0]), 1)
        lo, hi = state.confidence_interval(0.0, 0, 0.05, paper_table())
        half = 6.753 * np.sqrt(1.0 / 8.0)
        assert (lo, hi) == pytest.approx((1.0 - half, 1.0 + half), rel=1e-12)

    def test_beta_half_coefficient(self):
        state = RScaleState(1)
        state.observe(np.array([0.0]), 1)
        state.observe(np.array([2.0]), 1)
        lo, hi = state.confidence_interval(0.5, 0, 0.05, paper_table())
        half = 5.851 * np.sqrt(1.0 / 8.0)
        assert (lo, hi) == pytest.approx((1.0 - half, 1.0 + half), rel=1e-12)

    def test_degenerate_interval(self):
        state = RScaleState(1)
        for _ in range(4):
            state.observe(np.array([7.0]), 1)
        lo, hi = state.confidence_interval(0.0, 0, 0.05, paper_table())
        assert lo == hi == 7.0

    def test_missing_beta_errors(self):
        state = RScaleState(1)
        state.observe(np.array([1.0]), 1)
        with pytest.raises(KeyError):
            state.confidence_interval(0.4, 0, 0.05, paper_table())


class TestBetaForSchedule:
    def test_constant_maps_to_zero(self):
        assert beta_for_schedule(schedules.CommunicationSchedule("constant", base=5)) == 0.0

    def test_log_maps_to_zero(self):
        sched = schedules.CommunicationSchedule("log", base=1, exponent=2.0)
        assert beta_for_schedule(sched) == 0.0

    def test_power_keeps_exponent(self):
        sched = schedules.CommunicationSchedule("power", base=1, exponent=1.0 / 3.0)
        assert beta_for_schedule(sched) == pytest.approx(1.0 / 3.0)

    def test_explicit_schedule_rejected(self):
        with pytest.raises(ValueError):
            beta_for_schedule(schedules.ExplicitSchedule(intervals=(1, 2)))


class TestObserverAdapter:
    def test_feeds_interval_through(self):
        observer = RScaleObserver(1)
        observer.observe_sync(1, 3, np.array([1.0]), 3, None, None)
        assert observer.state.s == pytest.approx(1.0 / 3.0)
        assert observer.state.rounds_seen == 1
