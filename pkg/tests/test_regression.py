import numpy as np
import pytest

from covshift.core import HistoricalDataset
from covshift.regression import (
    fit_behavior_krr,
    fit_behavior_nw,
    fit_outcome_krr,
    fit_outcome_nw,
    floor_and_normalize,
)


def make_hist(x, actions, rewards, reward_max=1.0):
    return HistoricalDataset(np.asarray(x, dtype=float),
                             np.asarray(actions, dtype=int),
                             np.asarray(rewards, dtype=float),
                             reward_max=reward_max)


class TestOutcomeKrr:
    def test_constant_target_is_reproduced_exactly(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((50, 2))
        hist = make_hist(x, np.zeros(50), np.full(50, 0.6))
        model = fit_outcome_krr(hist, ridge=1e-2)
        preds = model.predict(np.zeros(20, dtype=int), rng.standard_normal((20, 2)))
        np.testing.assert_allclose(preds, 0.6, atol=1e-12)

    def test_huge_ridge_shrinks_to_target_mean(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((80, 1))
        y = rng.random(80)
        hist = make_hist(x, np.zeros(80), y)
        model = fit_outcome_krr(hist, ridge=1e9)
        preds = model.predict(np.zeros(10, dtype=int), rng.standard_normal((10, 1)))
        np.testing.assert_allclose(preds, y.mean(), atol=1e-6)

    def test_recovers_smooth_function(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(0, 3, (500, 1))
        y = 0.5 + 0.4 * np.sin(x[:, 0])  # keep targets within the reward range
        hist = make_hist(x, np.zeros(500), y)
        model = fit_outcome_krr(hist, sigma=0.5, ridge=1e-3)
        grid = np.linspace(0.1, 2.9, 60)[:, None]
        truth = 0.5 + 0.4 * np.sin(grid[:, 0])
        rmse = np.sqrt(np.mean((model.predict(np.zeros(60, dtype=int), grid) - truth) ** 2))
        assert rmse < 0.05 * 0.4  # scaled tolerance for the scaled sine

    def test_unseen_action_falls_back_to_global_mean(self):
        hist = make_hist([[0.0], [1.0]], [0, 0], [0.2, 0.4])
        model = fit_outcome_krr(hist, n_actions=3)
        preds = model.predict(np.array([2]), np.array([[0.5]]))
        assert preds[0] == pytest.approx(0.3)

    def test_predictions_clipped_to_reward_range(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((40, 1))
        hist = make_hist(x, np.zeros(40), rng.random(40))
        model = fit_outcome_krr(hist, sigma=0.05, ridge=1e-9)
        preds = model.predict(np.zeros(200, dtype=int), rng.standard_normal((200, 1)))
        assert np.all(preds >= 0.0) and np.all(preds <= 1.0)

    def test_dual_solve_residual_is_tiny(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((120, 2))
        actions = rng.integers(0, 3, 120)
        hist = make_hist(x, actions, rng.random(120))
        model = fit_outcome_krr(hist, ridge=1e-3)
        for a in range(3):
            assert model.solve_residual(a) <= 1e-8


class TestBehaviorKrr:
    def test_single_action_dataset(self):
        hist = make_hist([[0.0], [1.0]], [0, 0], [1.0, 0.0])
        policy = fit_behavior_krr(hist, n_actions=1)
        np.testing.assert_array_equal(policy.prob_matrix(np.zeros((3, 1))), 1.0)

    def test_uniform_logging_recovered(self):
        rng = np.random.default_rng(5)
        n = 2000
        x = rng.standard_normal((n, 2))
        actions = rng.integers(0, 4, n)
        hist = make_hist(x, actions, np.zeros(n))
        policy = fit_behavior_krr(hist, ridge=20.0, n_actions=4)
        probs = policy.prob_matrix(x)
        assert np.max(np.abs(probs - 0.25)) < 0.1

    def test_logistic_logging_recovered(self):
        rng = np.random.default_rng(6)
        n = 5000
        x = rng.standard_normal((n, 1))
        p1 = 1.0 / (1.0 + np.exp(-1.5 * x[:, 0]))
        actions = (rng.random(n) < p1).astype(int)
        hist = make_hist(x, actions, np.zeros(n))
        policy = fit_behavior_krr(hist, sigma=0.8, ridge=1.0, n_actions=2)
        probs = policy.prob_matrix(x)
        truth = np.stack([1 - p1, p1], axis=1)
        assert np.mean(np.abs(probs - truth)) < 0.05

    def test_outputs_form_floored_distribution(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((300, 3))
        actions = rng.integers(0, 5, 300)
        hist = make_hist(x, actions, np.zeros(300))
        policy = fit_behavior_krr(hist, floor=0.01, n_actions=5)
        probs = policy.prob_matrix(rng.standard_normal((100, 3)))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        assert probs.min() >= 0.01 - 1e-12


class TestFloorAndNormalize:
    def test_rows_sum_to_one_and_respect_floor(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            raw = rng.normal(0, 1, (20, 6))
            out = floor_and_normalize(raw, 0.01)
            np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
            assert out.min() >= 0.01 - 1e-12

    def test_all_zero_row_becomes_uniform(self):
        out = floor_and_normalize(np.zeros((1, 4)), 0.05)
        np.testing.assert_allclose(out, 0.25)

    def test_untouched_when_already_valid(self):
        probs = np.array([[0.3, 0.7], [0.5, 0.5]])
        np.testing.assert_allclose(floor_and_normalize(probs, 0.01), probs)

    def test_invalid_floor_rejected(self):
        with pytest.raises(ValueError):
            floor_and_normalize(np.ones((1, 4)) / 4, 0.5)


class TestOutcomeNw:
    def test_constant_rewards(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((60, 2))
        hist = make_hist(x, np.zeros(60), np.full(60, 0.42))
        model = fit_outcome_nw(hist, h=0.5)
        preds = model.predict(np.zeros(25, dtype=int), rng.standard_normal((25, 2)))
        np.testing.assert_allclose(preds, 0.42, atol=1e-12)

    def test_tiny_bandwidth_localizes_to_nearest_point(self):
        x = np.array([[0.0], [1.0], [2.0]])
        hist = make_hist(x, [0, 0, 0], [0.1, 0.9, 0.4])
        model = fit_outcome_nw(hist, h=0.01)
        assert model.predict(np.array([0]), np.array([[1.0]]))[0] == pytest.approx(0.9)

    def test_recovers_linear_function(self):
        rng = np.random.default_rng(10)
        x = rng.uniform(0, 1, (2000, 1))
        hist = make_hist(x, np.zeros(2000), x[:, 0])
        model = fit_outcome_nw(hist, h=0.05)
        pred = model.predict(np.array([0]), np.array([[0.5]]))[0]
        assert pred == pytest.approx(0.5, abs=0.02)

    def test_predictions_are_convex_combinations(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((100, 1))
        y = rng.random(100)
        hist = make_hist(x, rng.integers(0, 2, 100), y)
        model = fit_outcome_nw(hist, h=0.3)
        queries = rng.standard_normal((500, 1)) * 5
        actions = rng.integers(0, 2, 500)
        preds = model.predict(actions, queries)
        assert np.all(preds >= y.min() - 1e-12)
        assert np.all(preds <= y.max() + 1e-12)

    def test_degenerate_mass_falls_back_to_action_mean(self):
        x = np.array([[0.0], [0.1]])
        hist = make_hist(x, [0, 0], [0.2, 0.6])
        model = fit_outcome_nw(hist, h=0.01)
        # Query far from all mass: kernel weights underflow to zero.
        pred = model.predict(np.array([0]), np.array([[500.0]]))[0]
        assert pred == pytest.approx(0.4)

    def test_fallback_disabled_raises(self):
        hist = make_hist([[0.0]], [0], [0.5])
        model = fit_outcome_nw(hist, h=0.01, n_actions=2, allow_fallback=False)
        with pytest.raises(ValueError):
            model.predict(np.array([1]), np.array([[0.0]]))

    def test_invalid_bandwidth(self):
        hist = make_hist([[0.0]], [0], [0.5])
        with pytest.raises(ValueError):
            fit_outcome_nw(hist, h=-1.0)


class TestBehaviorNw:
    def test_uniform_logging_recovered(self):
        rng = np.random.default_rng(12)
        n = 1500
        x = rng.standard_normal((n, 2))
        actions = rng.integers(0, 3, n)
        hist = make_hist(x, actions, np.zeros(n))
        policy = fit_behavior_nw(hist, n_actions=3)
        probs = policy.prob_matrix(x)
        assert np.max(np.abs(probs - 1 / 3)) < 0.15
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_far_query_uses_marginal_frequencies(self):
        x = np.array([[0.0], [0.0], [0.0], [0.0]])
        hist = make_hist(x, [0, 0, 0, 1], np.zeros(4))
        policy = fit_behavior_nw(hist, h=0.01, floor=0.0, n_actions=2)
        probs = policy.prob_matrix(np.array([[1000.0]]))
        np.testing.assert_allclose(probs[0], [0.75, 0.25])
