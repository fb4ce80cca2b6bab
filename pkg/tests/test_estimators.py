import numpy as np
import pytest

from trialadjust import dgp
from trialadjust.data import DataError, DesignSpec, HistoricalDataset, TrialDataset, counterfactual_designs
from trialadjust.estimators import (
    EstimationError,
    ancova_estimate,
    arm_predictions,
    fit_linear,
    if_variance,
    influence_curve,
    oracle_adjust_estimate,
    plugin_ate,
    prognostic_adjust_estimate,
    score_equation,
    tmle_epsilon,
    tmle_estimate,
    tmle_update,
    unadjusted_estimate,
    within_trial_estimate,
)
from trialadjust.learners import CrossFitPlan, LearnerSpec, cross_fit_predict
from trialadjust.numerics import make_rng, normal_quantile, solve_least_squares, two_sided_p_value

FAST_LIB = [LearnerSpec("mean"), LearnerSpec("ols"), LearnerSpec("knn", {"k": 10})]


@pytest.fixture(scope="module")
def het_crossfit():
    data = dgp.sample_trial(200, "heterogeneous", make_rng(7, 0, 0))
    return data, cross_fit_predict(FAST_LIB, data, CrossFitPlan("v-fold", 10, 3), sl_folds=5)


class TestPlugin:
    def test_constants(self, four_rows):
        assert plugin_ate(lambda a, W: np.full(len(W), 5.0 if a else 3.0), four_rows)[2] == 2.0

    def test_linear_function(self, four_rows):
        psi1, psi0, psi = plugin_ate(lambda a, W: 2 * a + W[:, 0], four_rows)
        assert (psi1, psi0, psi) == (3.5, 1.5, 2.0)

    def test_matches_ols_coefficient(self, het_trial):
        fit = fit_linear(het_trial, DesignSpec())
        assert plugin_ate((fit.mu1, fit.mu0), het_trial)[2] == pytest.approx(fit.coefficient("A"), abs=1e-10)

    def test_non_finite_prediction_names_row(self, four_rows):
        mu1 = np.array([1.0, 1.0, np.nan, 1.0])
        with pytest.raises(EstimationError, match="row 2"):
            plugin_ate((mu1, np.zeros(4)), four_rows)


class TestInfluenceCurve:
    def test_exact_fit_has_zero_variance(self):
        data = TrialDataset(W=np.zeros((4, 1)), A=[1, 1, 0, 0], Y=[5.0, 5, 3, 3])
        sigma2, se, _ = if_variance((np.full(4, 5.0), np.full(4, 3.0)), data, 5.0, 3.0)
        assert sigma2 == 0.0 and se == 0.0

    def test_four_rows(self, four_rows):
        sigma2, se, ic = if_variance((np.full(4, 2.0), np.full(4, 1.0)), four_rows, 2.0, 1.0)
        np.testing.assert_allclose(ic**2, 4.0)
        assert sigma2 == 4.0 and se == 1.0

    @pytest.mark.parametrize("c", [-3.0, 0.5, 7.0])
    def test_scale_homogeneity(self, het_trial, c):
        fit = fit_linear(het_trial, DesignSpec())
        psi1, psi0, _ = plugin_ate((fit.mu1, fit.mu0), het_trial)
        _, se, _ = if_variance((fit.mu1, fit.mu0), het_trial, psi1, psi0)
        scaled = TrialDataset(het_trial.W, het_trial.A, c * het_trial.Y)
        _, se_c, _ = if_variance((c * fit.mu1, c * fit.mu0), scaled, c * psi1, c * psi0)
        assert se_c == pytest.approx(abs(c) * se, rel=1e-12)

    def test_mean_zero_for_ols_with_intercept_and_treatment(self, het_trial):
        fit = fit_linear(het_trial, DesignSpec())
        psi1, psi0, psi = plugin_ate((fit.mu1, fit.mu0), het_trial)
        ic = influence_curve((fit.mu1, fit.mu0), het_trial, psi1, psi0)
        assert abs(ic.mean()) < 1e-10
        uncentered = influence_curve((fit.mu1, fit.mu0), het_trial, 0.0, 0.0)
        assert uncentered.mean() == pytest.approx(psi, abs=1e-10)


class TestUnadjusted:
    def test_four_rows(self, four_rows):
        res = unadjusted_estimate(four_rows)
        assert res.psi_hat == 1.0 and res.se == 1.0
        z = normal_quantile(0.975)
        assert res.ci_lower == pytest.approx(1 - z) and res.ci_upper == pytest.approx(1 + z)
        assert res.p_value == pytest.approx(two_sided_p_value(1.0))

    def test_constant_outcome_is_degenerate(self):
        res = unadjusted_estimate(TrialDataset(np.zeros((4, 1)), [1, 0, 1, 0], np.full(4, 2.0)))
        assert res.psi_hat == 0.0 and res.se == 0.0
        assert res.diagnostics["degenerate_ci"] is True
        assert res.ci_lower == res.ci_upper == 0.0 and res.p_value == 1.0

    def test_location_invariance(self, het_trial):
        a = unadjusted_estimate(het_trial)
        b = unadjusted_estimate(TrialDataset(het_trial.W, het_trial.A, het_trial.Y + 100.0))
        assert b.psi_hat == pytest.approx(a.psi_hat, abs=1e-10)
        assert b.se == pytest.approx(a.se, abs=1e-10)

    def test_result_invariants(self, het_trial):
        res = unadjusted_estimate(het_trial, alpha=0.1)
        z = normal_quantile(0.95)
        assert res.ci_lower < res.ci_upper
        assert res.ci_lower == pytest.approx(res.psi_hat - z * res.se, abs=1e-12)
        assert 0.0 <= res.p_value <= 1.0
        assert set(res.to_dict()) >= {"psi_hat", "se", "ci_lower", "ci_upper", "p_value"}


class TestAncova:
    def test_no_covariates_is_unadjusted(self, het_trial):
        a = ancova_estimate(het_trial, DesignSpec(covariate_columns=[]))
        b = unadjusted_estimate(het_trial)
        assert a.psi_hat == pytest.approx(b.psi_hat, abs=1e-10)
        assert a.se == pytest.approx(b.se, abs=1e-10)

    @pytest.mark.parametrize("coding", ["01", "pm1"])
    def test_coefficient_identity(self, het_trial, coding):
        res = ancova_estimate(het_trial, DesignSpec(treatment_coding=coding))
        assert res.psi_hat == pytest.approx(res.diagnostics["treatment_coefficient"], abs=1e-10)

    def test_centered_interactions(self, het_trial):
        spec = DesignSpec(interactions=True)
        res = ancova_estimate(het_trial, spec)
        # explicit plug-in oracle: average predicted difference over all rows
        fit = fit_linear(het_trial, spec)
        X1, X0 = counterfactual_designs(het_trial, spec)
        assert res.psi_hat == pytest.approx(np.mean(X1 @ fit.coef - X0 @ fit.coef), abs=1e-12)
        assert res.psi_hat == pytest.approx(res.diagnostics["treatment_coefficient"], abs=1e-10)

    def test_uncentered_interactions_break_identity(self, het_trial):
        res = ancova_estimate(het_trial, DesignSpec(interactions=True, center_covariates=False))
        assert abs(res.psi_hat - res.diagnostics["treatment_coefficient"]) > 1e-3

    def test_singular_raise_policy(self, four_rows):
        dup = TrialDataset(np.column_stack([four_rows.W, four_rows.W]), four_rows.A, four_rows.Y)
        with pytest.raises(Exception, match="w2"):
            ancova_estimate(dup, on_singular="raise")
        assert ancova_estimate(dup).diagnostics["dropped_columns"] == ["w2"]


class TestPrognostic:
    def test_constant_historical_outcome_reduces_to_ancova(self, het_trial):
        hist = HistoricalDataset(make_rng(2).normal(size=(100, 7)), np.full(100, 3.0))
        res = prognostic_adjust_estimate(het_trial, hist, [LearnerSpec("mean")])
        base = ancova_estimate(het_trial)
        assert res.diagnostics["dropped_columns"] == ["score"]
        assert res.psi_hat == pytest.approx(base.psi_hat, abs=1e-10)
        assert res.se == pytest.approx(base.se, abs=1e-10)

    def test_coefficient_identity(self, het_trial):
        hist = dgp.sample_historical(500, "heterogeneous", "none", make_rng(3))
        res = prognostic_adjust_estimate(het_trial, hist, FAST_LIB, v=5)
        assert res.estimator == "prog-historical"
        assert res.psi_hat == pytest.approx(res.diagnostics["treatment_coefficient"], abs=1e-10)

    def test_dimension_mismatch(self, het_trial):
        hist = HistoricalDataset(np.zeros((10, 3)), np.zeros(10))
        with pytest.raises(DataError):
            prognostic_adjust_estimate(het_trial, hist, FAST_LIB)

    def test_oracle_score_beats_unadjusted(self):
        wins = 0
        for rep in range(250):
            data = dgp.sample_trial(200, "homogeneous", make_rng(99, rep, 0))
            adj = prognostic_adjust_estimate(data, score=data.m0)
            wins += adj.se < unadjusted_estimate(data).se
        assert wins >= 0.95 * 250


class TestTmle:
    def test_epsilon_four_rows(self, four_rows):
        assert tmle_epsilon((np.zeros(4), np.zeros(4)), four_rows) == 0.5

    def test_epsilon_zero_when_residuals_balanced(self, four_rows):
        assert tmle_epsilon((np.full(4, 2.0), np.full(4, 1.0)), four_rows) == 0.0

    def test_epsilon_matches_least_squares(self, het_crossfit):
        data, cf = het_crossfit
        resid = data.Y - cf.observed
        slope = solve_least_squares(data.A_pm[:, None].astype(float), resid)[0]
        assert tmle_epsilon((cf.mu1, cf.mu0), data) == pytest.approx(slope, abs=1e-12)

    def test_zero_initial_four_rows(self, four_rows):
        mu1s, mu0s, diag = tmle_update(four_rows, (np.zeros(4), np.zeros(4)))
        np.testing.assert_array_equal(mu1s, 0.5)
        np.testing.assert_array_equal(mu0s, -0.5)
        res = tmle_estimate(four_rows, initial=(np.zeros(4), np.zeros(4)))
        assert res.psi_hat == 1.0
        assert score_equation(four_rows, (mu1s, mu0s)) == 0.0

    def test_zero_initial_gives_arm_difference(self, het_trial):
        balanced = TrialDataset(het_trial.W, np.arange(200) % 2, het_trial.Y)
        res = tmle_estimate(balanced, initial=(np.zeros(200), np.zeros(200)))
        assert res.psi_hat == pytest.approx(unadjusted_estimate(balanced).psi_hat, abs=1e-12)

    def test_zero_initial_unbalanced_arms(self, het_trial):
        # with n1 != n0 the additive update weights arm sums by n_a / (n / 2)
        d = het_trial
        res = tmle_estimate(d, initial=(np.zeros(200), np.zeros(200)))
        expected = 2.0 * (d.Y[d.A == 1].sum() - d.Y[d.A == 0].sum()) / d.n
        assert d.n1 != d.n0
        assert res.psi_hat == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("submodel", ["additive-eps", "linear-fluctuation"])
    def test_score_equation(self, het_crossfit, submodel):
        data, cf = het_crossfit
        res = tmle_estimate(data, initial=cf, submodel=submodel)
        assert abs(res.diagnostics["score_equation"]) < 1e-8

    def test_condition_one_on_probe_grid(self, het_crossfit):
        data, cf = het_crossfit
        # additive submodel at eps = 0
        for eps in (0.0,):
            np.testing.assert_array_equal(cf.mu1 + eps, cf.mu1)
        # linear fluctuation at beta = (0, 1, 0): only the initial-fit column has weight
        probe = make_rng(31).normal(size=(40, data.p))
        mu1p, mu0p = 1.0 + probe[:, 0], -probe[:, 1]
        a = make_rng(32).integers(0, 2, 40)
        a[:2] = [0, 1]
        pd = TrialDataset(probe, a, np.zeros(40))
        spec = DesignSpec(treatment_coding="pm1").with_score(np.where(a == 1, mu1p, mu0p), mu1p, mu0p)
        names = spec.column_names(pd)
        beta = np.zeros(len(names))
        beta[names.index("score")] = 1.0
        X1, X0 = counterfactual_designs(pd, spec)
        np.testing.assert_array_equal(X1 @ beta, mu1p)
        np.testing.assert_array_equal(X0 @ beta, mu0p)

    def test_default_submodel(self, het_crossfit):
        data, cf = het_crossfit
        assert tmle_estimate(data, initial=cf).estimator == "tmle"
        skew = TrialDataset(data.W, data.A, data.Y, pi1=0.6)
        assert tmle_estimate(skew, initial=cf).estimator == "tmle-linear"

    def test_unknown_submodel(self, four_rows):
        with pytest.raises(ValueError):
            tmle_update(four_rows, (np.zeros(4), np.zeros(4)), "logistic")


class TestWithinTrial:
    @pytest.mark.parametrize("score_only", [False, True])
    def test_equivalent_to_linear_fluctuation(self, het_crossfit, score_only):
        data, cf = het_crossfit
        spec = DesignSpec(covariate_columns=[] if score_only else None)
        wt = within_trial_estimate(data, initial=cf, spec=spec)
        tl = tmle_estimate(data, initial=cf, submodel="linear-fluctuation", spec=spec)
        assert wt.psi_hat == pytest.approx(tl.psi_hat, abs=1e-10)
        assert wt.se == pytest.approx(tl.se, abs=1e-10)

    def test_constant_score_reduces_to_ancova(self, het_trial):
        const = (np.full(200, 1.5), np.full(200, 1.5))
        wt = within_trial_estimate(het_trial, initial=const)
        base = ancova_estimate(het_trial)
        assert wt.psi_hat == pytest.approx(base.psi_hat, abs=1e-10)
        assert wt.se == pytest.approx(base.se, abs=1e-10)

    def test_records_selected_learners(self, het_crossfit):
        data, cf = het_crossfit
        wt = within_trial_estimate(data, initial=cf)
        assert len(wt.diagnostics["selected_learner"]) == 10

    def test_score_equation(self, het_crossfit):
        data, cf = het_crossfit
        spec = DesignSpec().with_score(cf.observed, cf.mu1, cf.mu0)
        fit = fit_linear(data, spec)
        assert abs(score_equation(data, (fit.mu1, fit.mu0))) < 1e-8
        wt = within_trial_estimate(data, initial=cf)
        assert wt.psi_hat == pytest.approx(np.mean(fit.mu1 - fit.mu0), abs=1e-12)


class TestOracle:
    def test_homogeneous_drops_collinear_column(self):
        data = dgp.sample_trial(200, "homogeneous", make_rng(5, 0, 0))
        res = oracle_adjust_estimate(data)
        assert res.diagnostics["dropped_columns"] == ["m0"]
        assert np.isfinite(res.psi_hat) and res.se > 0

    def test_needs_augmented_data(self, four_rows):
        with pytest.raises(DataError):
            oracle_adjust_estimate(four_rows)

    def test_se_shrinks_with_noise(self):
        # homogeneous only: there Y is linear in (A, m0) once the noise is gone
        d = dgp.sample_trial(200, "homogeneous", make_rng(6, 0, 0))
        small = dgp.AugmentedTrialDataset(
            d.W, d.A, np.where(d.A == 1, d.m1, d.m0) + 1e-6 * (d.Y - np.where(d.A == 1, d.m1, d.m0)),
            U=d.U, Y0=d.m0 + 1e-6 * (d.Y0 - d.m0), Y1=d.m1 + 1e-6 * (d.Y1 - d.m1), m0=d.m0, m1=d.m1)
        assert oracle_adjust_estimate(small).se < 1e-5 * oracle_adjust_estimate(d).se


def test_arm_predictions_broadcast(four_rows):
    mu1, mu0 = arm_predictions((2.0, 1.0), four_rows)
    np.testing.assert_array_equal(mu1, 2.0)
    assert mu0.shape == (4,)
