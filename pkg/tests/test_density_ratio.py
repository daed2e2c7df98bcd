import numpy as np
import pytest

from conftest import gaussian_shift_l2_errors
from covshift.density_ratio import (
    KdeModel,
    KulsifModel,
    fit_kde,
    fit_kulsif,
    kde_eval,
    kde_ratio_predict,
    kulsif_objective,
    product_l2_error_check,
    ratio_predict,
)


class TestKulsifFit:
    def test_identical_distributions_recover_unit_ratio(self):
        rng = np.random.default_rng(3)
        hist_x = rng.standard_normal((1000, 1))
        evl_x = rng.standard_normal((1000, 1))
        model = fit_kulsif(hist_x, evl_x)
        grid = np.linspace(-2, 2, 81)[:, None]
        assert np.mean(np.abs(model.predict(grid) - 1.0)) < 0.1

    def test_huge_ridge_gives_zero_function(self):
        rng = np.random.default_rng(0)
        model = fit_kulsif(rng.standard_normal((200, 1)),
                           rng.standard_normal((200, 1)), ridge=1e8)
        grid = np.linspace(-3, 3, 50)[:, None]
        assert np.max(np.abs(model.predict(grid))) < 1e-6

    def test_objective_no_worse_than_zero_function(self):
        rng = np.random.default_rng(1)
        model = fit_kulsif(rng.standard_normal((150, 2)),
                           rng.standard_normal((150, 2)) + 0.2)
        assert kulsif_objective(model) <= 0.0

    def test_fitted_coefficients_are_a_local_minimum(self):
        rng = np.random.default_rng(2)
        model = fit_kulsif(rng.standard_normal((120, 1)),
                           rng.standard_normal((120, 1)) + 0.3)
        base = kulsif_objective(model)
        for direction_seed in range(20):
            drng = np.random.default_rng(direction_seed)
            for sign in (+1.0, -1.0):
                perturbed = kulsif_objective(
                    model,
                    model.hist_coef + sign * drng.normal(0, 1e-4, len(model.hist_coef)),
                    model.evl_coef + sign * drng.normal(0, 1e-4, len(model.evl_coef)),
                )
                assert perturbed >= base - 1e-12

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            fit_kulsif(np.zeros((5, 2)), np.zeros((5, 3)))

    def test_invalid_hyperparameters_rejected(self):
        x = np.zeros((5, 1))
        with pytest.raises(ValueError):
            fit_kulsif(x, x, sigma=-1.0)
        with pytest.raises(ValueError):
            fit_kulsif(x, x, ridge=0.0)


class TestRatioPredict:
    def test_training_point_prediction_near_one_without_shift(self):
        rng = np.random.default_rng(7)
        hist_x = rng.standard_normal((800, 1))
        model = fit_kulsif(hist_x, rng.standard_normal((800, 1)))
        values = ratio_predict(model, hist_x[:50])
        assert np.all(values >= 0.5) and np.all(values <= 1.5)

    def test_zero_function_model_predicts_zero(self):
        rng = np.random.default_rng(0)
        model = fit_kulsif(rng.standard_normal((100, 1)),
                           rng.standard_normal((100, 1)), ridge=1e8)
        assert ratio_predict(model, np.array([[0.4]]))[0] == pytest.approx(0.0, abs=1e-8)

    def test_clipping_at_ratio_bound(self):
        model = KulsifModel(
            hist_x=np.array([[0.0]]),
            evl_x=np.array([[0.0]]),
            hist_coef=np.array([12.0]),
            evl_coef=np.array([0.0]),
            sigma=1.0,
            ridge=1.0,
            ratio_bound=5.0,
        )
        assert model.raw_predict(np.array([[0.0]]))[0] == pytest.approx(12.0)
        assert ratio_predict(model, np.array([[0.0]]))[0] == 5.0

    def test_predictions_within_bound_everywhere(self):
        rng = np.random.default_rng(11)
        model = fit_kulsif(rng.standard_normal((300, 2)),
                           rng.standard_normal((300, 2)) + 0.8, ratio_bound=10.0)
        values = ratio_predict(model, rng.standard_normal((500, 2)))
        assert np.all(values >= 0.0) and np.all(values <= 10.0)


class TestKde:
    def test_single_sample_at_its_own_location(self):
        model = fit_kde(np.array([[1.5]]), h=0.3)
        expected = (1 / 0.3) * (2 * np.pi) ** -0.5
        assert kde_eval(model, np.array([[1.5]]))[0] == pytest.approx(expected, rel=1e-12)

    def test_standard_normal_density_at_origin(self):
        rng = np.random.default_rng(5)
        model = fit_kde(rng.standard_normal((10000, 1)), h=0.2)
        value = kde_eval(model, np.array([[0.0]]))[0]
        assert value == pytest.approx(1 / np.sqrt(2 * np.pi), rel=0.05)

    def test_symmetric_two_point_sample(self):
        model = fit_kde(np.array([[-1.0], [1.0]]), h=0.5)
        expected = (1 / 0.5) * np.exp(-0.5 * (1 / 0.5) ** 2) / np.sqrt(2 * np.pi)
        assert kde_eval(model, np.array([[0.0]]))[0] == pytest.approx(expected, rel=1e-12)

    def test_normalization_by_quadrature(self):
        rng = np.random.default_rng(9)
        model = fit_kde(rng.standard_normal((500, 1)), h=0.4)
        grid = np.linspace(-10, 10, 4001)
        density = kde_eval(model, grid[:, None])
        integral = np.trapezoid(density, grid)
        assert integral == pytest.approx(1.0, abs=1e-3)

    def test_nonnegative_everywhere(self):
        rng = np.random.default_rng(4)
        model = fit_kde(rng.standard_normal((50, 2)))
        assert np.all(kde_eval(model, rng.standard_normal((100, 2))) >= 0.0)

    def test_invalid_bandwidth_rejected(self):
        with pytest.raises(ValueError):
            fit_kde(np.zeros((3, 1)), h=0.0)
        with pytest.raises(ValueError):
            fit_kde(np.zeros((3, 1)), kernel="epanechnikov")

    def test_leave_one_out_excludes_self(self):
        samples = np.array([[0.0], [10.0]])
        model = fit_kde(samples, h=1.0)
        loo = np.exp(model.log_eval_loo())
        # Each point only sees the far-away other point.
        expected = np.exp(-0.5 * 10.0**2) / np.sqrt(2 * np.pi)
        np.testing.assert_allclose(loo, expected, rtol=1e-10)


class TestKdeRatio:
    def test_identical_samples_give_unit_ratio(self):
        rng = np.random.default_rng(21)
        samples = rng.standard_normal((100, 2))
        model = fit_kde(samples, h=0.7)
        values = kde_ratio_predict(model, model, rng.standard_normal((40, 2)))
        np.testing.assert_allclose(values, 1.0, rtol=1e-9)

    def test_floor_caps_the_denominator(self):
        q_model = fit_kde(np.array([[0.0]]), h=0.5)
        p_model = fit_kde(np.array([[100.0]]), h=0.5)
        x = np.array([[0.0]])
        value = kde_ratio_predict(q_model, p_model, x, floor=1e-6, ratio_bound=1e12)
        expected = kde_eval(q_model, x)[0] / 1e-6
        assert value[0] == pytest.approx(expected, rel=1e-9)

    def test_ratio_clipped_to_bound(self):
        q_model = fit_kde(np.array([[0.0]]), h=0.5)
        p_model = fit_kde(np.array([[100.0]]), h=0.5)
        value = kde_ratio_predict(q_model, p_model, np.array([[0.0]]),
                                  floor=1e-6, ratio_bound=10.0)
        assert value[0] == 10.0

    def test_shifted_gaussians_error_decreases_with_sample_size(self):
        def fit(hist_x, evl_x):
            p_model = fit_kde(hist_x)
            q_model = fit_kde(evl_x)
            return lambda grid: kde_ratio_predict(q_model, p_model, grid,
                                                  floor=1e-12, ratio_bound=50.0)

        errors = gaussian_shift_l2_errors((250, 1000), seeds=(0, 1, 2), fit_fn=fit)
        assert errors[1000] < errors[250]

    def test_invalid_floor_rejected(self):
        model = fit_kde(np.zeros((3, 1)), h=1.0)
        with pytest.raises(ValueError):
            kde_ratio_predict(model, model, np.zeros((1, 1)), floor=0.0)


class TestProductErrorDiagnostic:
    def test_bound_holds_for_random_bounded_nuisances(self):
        rng = np.random.default_rng(6)
        c1, c2 = 10.0, 100.0
        for _ in range(25):
            n = 200
            ratio_true = rng.uniform(0, c1, n)
            weight_true = rng.uniform(0, c2, n)
            ratio_hat = np.clip(ratio_true + rng.normal(0, 0.5, n), 0, c1)
            weight_hat = np.clip(weight_true + rng.normal(0, 2.0, n), 0, c2)
            report = product_l2_error_check(
                ratio_hat, ratio_true, weight_hat, weight_true, c1, c2
            )
            assert report["satisfied"]
            assert report["product_error"] <= report["bound"] + 1e-12

    def test_reports_component_errors(self):
        ones = np.ones(4)
        report = product_l2_error_check(ones * 2, ones, ones * 3, ones, 10.0, 10.0)
        assert report["ratio_error"] == pytest.approx(1.0)
        assert report["weight_error"] == pytest.approx(2.0)
        assert report["product_error"] == pytest.approx(5.0)
