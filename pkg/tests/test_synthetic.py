import json

import numpy as np
import pytest

from conftest import (
    FIXTURE_BEHAVIOR,
    FIXTURE_EVAL_POLICY,
    FIXTURE_P,
    FIXTURE_Q,
    FIXTURE_SUCCESS,
    brute_force_value,
)
from covshift.core import TablePolicy, UniformPolicy
from covshift.estimators import drcs_estimate, efficiency_bound_tabular
from covshift.synthetic import (
    TabularDGP,
    exact_policy_value,
    misspecify,
    oracle_nuisances,
    sample_datasets,
)


class TestSampleDatasets:
    def test_stratified_counts(self, dgp):
        hist, evl = sample_datasets(dgp, 100, rho=0.5, seed=0)
        assert len(hist) == 50 and len(evl) == 50

    def test_rounding(self, dgp):
        hist, evl = sample_datasets(dgp, 10, rho=0.26, seed=0)
        assert len(hist) == 3 and len(evl) == 7

    def test_invalid_rho(self, dgp):
        with pytest.raises(ValueError):
            sample_datasets(dgp, 100, rho=1.2, seed=0)
        with pytest.raises(ValueError):
            sample_datasets(dgp, 4, rho=0.01, seed=0)

    def test_deterministic_rewards_match_table(self):
        dgp = TabularDGP(
            p=np.array([0.5, 0.5]),
            q=np.array([0.5, 0.5]),
            behavior=np.array([[0.5, 0.5], [0.5, 0.5]]),
            success=np.array([[1.0, 0.0], [0.0, 1.0]]),
        )
        hist, _ = sample_datasets(dgp, 400, seed=3)
        states = hist.covariates[:, 0].astype(int)
        expected = dgp.success[states, hist.actions]
        np.testing.assert_array_equal(hist.rewards, expected)

    def test_marginals_match_at_large_n(self, dgp):
        hist, evl = sample_datasets(dgp, 200000, seed=7)
        for states, probs in ((hist.covariates[:, 0].astype(int), dgp.p),
                              (evl.covariates[:, 0].astype(int), dgp.q)):
            counts = np.bincount(states, minlength=4) / len(states)
            se = np.sqrt(probs * (1 - probs) / len(states))
            assert np.all(np.abs(counts - probs) <= 3 * se + 1e-9)

    def test_seed_reproducibility(self, dgp):
        a = sample_datasets(dgp, 500, seed=11)
        b = sample_datasets(dgp, 500, seed=11)
        np.testing.assert_array_equal(a[0].covariates, b[0].covariates)
        np.testing.assert_array_equal(a[0].actions, b[0].actions)
        np.testing.assert_array_equal(a[0].rewards, b[0].rewards)
        np.testing.assert_array_equal(a[1].covariates, b[1].covariates)


class TestExactPolicyValue:
    def test_constant_reward(self):
        dgp = TabularDGP(
            p=np.array([0.3, 0.7]),
            q=np.array([0.6, 0.4]),
            behavior=np.full((2, 3), 1 / 3),
            success=np.full((2, 3), 0.55),
        )
        assert exact_policy_value(dgp, UniformPolicy(3)) == pytest.approx(0.55)

    def test_point_mass(self):
        dgp = TabularDGP(
            p=np.array([0.5, 0.5]),
            q=np.array([0.0, 1.0]),
            behavior=np.array([[0.5, 0.5], [0.5, 0.5]]),
            success=np.array([[0.2, 0.9], [0.4, 0.7]]),
        )
        policy = TablePolicy(np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert exact_policy_value(dgp, policy) == pytest.approx(0.7)

    def test_two_by_two_against_independent_summation(self):
        p = [0.4, 0.6]
        q = [0.7, 0.3]
        behavior = [[0.5, 0.5], [0.2, 0.8]]
        success = [[0.1, 0.8], [0.6, 0.3]]
        pi_e = [[0.9, 0.1], [0.25, 0.75]]
        dgp = TabularDGP(p=np.array(p), q=np.array(q),
                         behavior=np.array(behavior), success=np.array(success))
        value = exact_policy_value(dgp, TablePolicy(np.array(pi_e)))
        assert value == pytest.approx(brute_force_value(q, pi_e, success), abs=1e-15)

    def test_fixture_value_against_independent_summation(self, dgp, eval_policy):
        value = exact_policy_value(dgp, eval_policy)
        oracle = brute_force_value(FIXTURE_Q, FIXTURE_EVAL_POLICY, FIXTURE_SUCCESS)
        assert value == pytest.approx(oracle, abs=1e-14)

    def test_relabeling_invariance(self, dgp, eval_policy):
        state_perm = np.array([2, 0, 3, 1])
        action_perm = np.array([1, 2, 0])
        permuted = TabularDGP(
            p=dgp.p[state_perm],
            q=dgp.q[state_perm],
            behavior=dgp.behavior[state_perm][:, action_perm],
            success=dgp.success[state_perm][:, action_perm],
            rho=dgp.rho,
        )
        permuted_policy = TablePolicy(eval_policy.table[state_perm][:, action_perm])
        assert exact_policy_value(permuted, permuted_policy) == pytest.approx(
            exact_policy_value(dgp, eval_policy), abs=1e-15
        )

    def test_logging_policy_value_when_no_shift(self, dgp):
        no_shift = TabularDGP(p=dgp.p, q=dgp.p, behavior=dgp.behavior,
                              success=dgp.success, rho=dgp.rho)
        value = exact_policy_value(no_shift, TablePolicy(dgp.behavior))
        expected = float(np.einsum("s,sa,sa->", dgp.p, dgp.behavior, dgp.success))
        assert value == pytest.approx(expected, abs=1e-15)


class TestDgpValidation:
    def test_support_violation_rejected(self):
        with pytest.raises(ValueError):
            TabularDGP(
                p=np.array([1.0, 0.0]),
                q=np.array([0.5, 0.5]),
                behavior=np.full((2, 2), 0.5),
                success=np.full((2, 2), 0.5),
            )

    def test_invalid_probability_tables_rejected(self):
        with pytest.raises(ValueError):
            TabularDGP(p=np.array([0.5, 0.6]), q=np.array([0.5, 0.5]),
                       behavior=np.full((2, 2), 0.5), success=np.full((2, 2), 0.5))
        with pytest.raises(ValueError):
            TabularDGP(p=np.array([0.5, 0.5]), q=np.array([0.5, 0.5]),
                       behavior=np.full((2, 2), 0.3), success=np.full((2, 2), 0.5))
        with pytest.raises(ValueError):
            TabularDGP(p=np.array([0.5, 0.5]), q=np.array([0.5, 0.5]),
                       behavior=np.full((2, 2), 0.5), success=np.full((2, 2), 1.5))

    def test_json_roundtrip(self, dgp, tmp_path):
        path = tmp_path / "dgp.json"
        path.write_text(json.dumps(dgp.to_json()))
        loaded = TabularDGP.load(str(path))
        np.testing.assert_array_equal(loaded.p, dgp.p)
        np.testing.assert_array_equal(loaded.q, dgp.q)
        np.testing.assert_array_equal(loaded.behavior, dgp.behavior)
        np.testing.assert_array_equal(loaded.success, dgp.success)
        assert loaded.rho == dgp.rho


class TestBoundDegeneracy:
    def test_zero_iff_deterministic_rewards_and_constant_value(self):
        base = dict(
            p=np.array([0.5, 0.5]),
            q=np.array([0.5, 0.5]),
            behavior=np.full((2, 2), 0.5),
        )
        policy = UniformPolicy(2)
        degenerate = TabularDGP(success=np.array([[1.0, 0.0], [0.0, 1.0]]), **base)
        assert efficiency_bound_tabular(degenerate, policy) == pytest.approx(0.0, abs=1e-15)
        noisy = TabularDGP(success=np.array([[0.5, 0.5], [0.5, 0.5]]), **base)
        assert efficiency_bound_tabular(noisy, policy) > 0.0
        varying_v = TabularDGP(success=np.array([[1.0, 1.0], [0.0, 0.0]]), **base)
        assert efficiency_bound_tabular(varying_v, policy) > 0.0


class TestMisspecify:
    def test_constant_mode(self, dgp):
        corrupted = misspecify(oracle_nuisances(dgp).ratio, "constant", 1.0)
        x = dgp.state_covariates()
        np.testing.assert_array_equal(corrupted(x), np.ones(len(x)))
        assert corrupted.description == "constant(1.0)"

    def test_scale_mode_stays_in_reward_range(self, dgp):
        oracle = oracle_nuisances(dgp)
        corrupted = misspecify(oracle.outcome, "scale", 0.5)
        x = dgp.state_covariates()
        actions = np.zeros(len(x), dtype=int)
        values = corrupted(actions, x)
        np.testing.assert_allclose(values, 0.5 * dgp.success[:, 0])
        assert np.all(values >= 0.0) and np.all(values <= 1.0)

    def test_shift_mode(self, dgp):
        oracle = oracle_nuisances(dgp)
        corrupted = misspecify(oracle.ratio, "shift", 0.25)
        x = dgp.state_covariates()
        np.testing.assert_allclose(corrupted(x), dgp.ratio_table() + 0.25)

    def test_unknown_mode_rejected(self, dgp):
        with pytest.raises(ValueError):
            misspecify(oracle_nuisances(dgp).ratio, "negate")

    def test_corrupted_ratio_keeps_estimator_consistent(self, dgp, eval_policy):
        # Wrong covariate weights, exact outcome model: the estimate stays
        # centered on the exact value.
        truth = exact_policy_value(dgp, eval_policy)
        corrupted_ratio = misspecify(oracle_nuisances(dgp).ratio, "constant", 1.0)
        fitter = lambda h, e: oracle_nuisances(dgp, ratio=corrupted_ratio)
        rng = np.random.default_rng(19)
        estimates = []
        for i in range(60):
            hist, evl = sample_datasets(dgp, 10000, seed=rng)
            estimates.append(drcs_estimate(hist, evl, eval_policy, fitter, seed=i).estimate)
        assert abs(np.mean(estimates) - truth) < 0.01
