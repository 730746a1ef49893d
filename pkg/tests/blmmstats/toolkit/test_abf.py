import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import spearmanr

from src.blmmstats.toolkit.abf import BayesFactors, effect_from_moments
from src.blmmstats.toolkit.errors import CollinearEffectError, InvalidPriorError
from src.blmmstats.toolkit.lmm import LinearMixedModel
from src.blmmstats.toolkit.priors import EffectPrior
from src.blmmstats.toolkit.scan import SnpScan
from src.blmmstats.toolkit.testing import TestData, check_docstring
from src.blmmstats.toolkit.utils import LN10


@pytest.fixture(scope="module")
def model():
    return LinearMixedModel(TestData.related_dataset(n=60, p=3, seed=23, beta=[0.3, 0.0, -0.2]))


@pytest.fixture(scope="module")
def null_fit(model):
    return model.optimize_lambda(kappa=0)


def test_null_prior_gives_unit_bayes_factor():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        p = rng.integers(1, 6)
        A = rng.normal(size=(p, p))
        effect = effect_from_moments(rng.normal(size=p), A @ A.T + 0.1 * np.eye(p), tau=10 ** rng.uniform(-1, 1))
        assert BayesFactors.abf_matrix(effect, np.zeros((p, p))).log10_abf == 0.0
    assert BayesFactors.abf_scalar(1.3, 0.2, 0.0) == 0.0


def test_scalar_and_matrix_forms_agree():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        beta = rng.normal(scale=0.5)
        v = 10 ** rng.uniform(-3, 0)
        omega = 10 ** rng.uniform(-3, 1)
        effect = effect_from_moments([beta], [[v]])
        matrix = BayesFactors.abf_matrix(effect, np.array([[omega]])).log10_abf
        assert matrix == pytest.approx(BayesFactors.abf_scalar(beta, v, omega), rel=1e-10, abs=1e-12)


def test_scalar_form_at_known_point():
    assert BayesFactors.abf_scalar(0.0, 1.0, 1.0) == pytest.approx(-0.5 * np.log10(2.0), abs=1e-12)


def test_implicit_pvalue_prior_matches_matrix_form(model, null_fit):
    effect = model.gls_effect(null_fit.lambda_check, null_fit.tau_check, columns=[0, 1, 2])
    for c in [0.1, 1.0, 25.0]:
        closed = BayesFactors.implicit_pvalue_abf(effect, c)
        matrix = BayesFactors.abf_matrix(effect, c * effect.v_check).log10_abf
        assert closed == pytest.approx(matrix, rel=1e-8, abs=1e-10)


def test_rank_deficient_prior_matches_reduced_effect(model, null_fit):
    effect = model.gls_effect(null_fit.lambda_check, null_fit.tau_check, columns=[0, 1, 2])
    W = np.zeros((3, 3))
    W[1, 1] = 0.2
    marginal = effect_from_moments(effect.beta_check[[1]], effect.v_check[[1]][:, [1]], tau=effect.tau)
    assert BayesFactors.abf_matrix(effect, W).log10_abf == pytest.approx(
        BayesFactors.abf_matrix(marginal, np.array([[0.2]])).log10_abf, rel=1e-8, abs=1e-10
    )


def test_score_statistic_equals_quadratic_form_at_null_anchor():
    rng = np.random.default_rng(3)
    for i in range(200):
        p = int(rng.integers(1, 6))
        dataset = TestData.related_dataset(n=40, p=p, seed=1000 + i, lambda_true=10 ** rng.uniform(-1, 1))
        model = LinearMixedModel(dataset)
        fit = model.optimize_lambda(kappa=0)
        effect = model.gls_effect(fit.lambda_check, fit.tau_check)
        score = BayesFactors.score_stat_fixed(model, fit)
        assert score == pytest.approx(effect.quad_form, rel=1e-8, abs=1e-10)


def test_local_alternative_matches_variance_component_score(model, null_fit):
    effect = model.gls_effect(null_fit.lambda_check, null_fit.tau_check)
    M = np.diag([1.0, 0.5, 2.0])
    T = BayesFactors.variance_component_score(model, null_fit, M)
    errors = []
    for gamma in [1e-2, 1e-3, 1e-4]:
        log_abf = BayesFactors.abf_matrix(effect, gamma * M).log10_abf * LN10
        errors.append(abs(np.expm1(log_abf - gamma * T / 2)))
    assert errors[0] > errors[1] > errors[2]
    assert errors[-1] < 1e-2


def test_ranks_follow_frequentist_statistics_under_scaled_prior():
    model = LinearMixedModel(TestData.related_dataset(n=100, p=40, seed=31))
    table = SnpScan(model, prior=EffectPrior.scaled_v(1, c=2.0)).run()
    assert table["flag"].eq("").all()
    assert spearmanr(table["log10_abf_k1"], table["wald"]).correlation == pytest.approx(1.0, abs=1e-12)
    assert spearmanr(table["log10_abf_k0"], table["score"]).correlation == pytest.approx(1.0, abs=1e-12)


def test_phi_grid_is_log_mean_of_components(model, null_fit):
    effect = model.gls_effect(null_fit.lambda_check, null_fit.tau_check, columns=[0, 1])
    prior = EffectPrior.skat([0.5, 0.5])
    phis = [0.1, 0.4, 1.6]
    per_phi = BayesFactors.per_phi_log10(effect, prior, phis)
    expected = np.log10(np.mean(10.0**per_phi))
    assert BayesFactors.abf_phi_grid(effect, prior, phis) == pytest.approx(expected, rel=1e-10, abs=1e-12)
    assert BayesFactors.average_log10(per_phi, [1.0, 0.0, 0.0]) == per_phi[0]


def test_scaled_prior_ignores_phi_grid(model, null_fit):
    effect = model.gls_effect(null_fit.lambda_check, null_fit.tau_check, columns=[0])
    assert BayesFactors.per_phi_log10(effect, EffectPrior.scaled_v(1, c=3.0)).shape == (1,)


@pytest.mark.parametrize(
    "W",
    [
        np.array([[1.0, 0.5], [0.0, 1.0]]),
        np.array([[1.0, 2.0], [2.0, 1.0]]),
        np.eye(3),
        np.array([[np.nan, 0.0], [0.0, 1.0]]),
    ],
)
def test_invalid_prior_is_rejected(W):
    effect = effect_from_moments([0.1, 0.2], np.eye(2))
    with pytest.raises(InvalidPriorError):
        BayesFactors.abf_matrix(effect, W)


def test_prior_with_wrong_dimension_is_rejected():
    effect = effect_from_moments([0.1, 0.2], np.eye(2))
    with pytest.raises(InvalidPriorError):
        BayesFactors.abf_prior(effect, EffectPrior.skat([1.0]))


def test_wald_needs_full_rank_effect():
    dataset = TestData.unrelated_dataset(n=50, p=2, seed=5)
    G = np.column_stack([dataset.G[:, 0], 2 * dataset.G[:, 0]])
    model = LinearMixedModel(dataset.with_effects(G, ["a", "b"]))
    fit = model.optimize_lambda(kappa=0)
    effect = model.gls_effect(fit.lambda_check, fit.tau_check, allow_singular=True)
    assert not effect.full_rank
    with pytest.raises(CollinearEffectError):
        BayesFactors.wald_stat(effect)
    assert np.isfinite(BayesFactors.abf_matrix(effect, 0.1 * np.eye(2)).log10_abf)


def test_score_stats_and_pvalues(model, null_fit):
    fit1 = model.optimize_lambda(kappa=1, columns=[0, 1])
    effect1 = model.gls_effect(fit1.lambda_check, fit1.tau_check, columns=[0, 1])
    stats = BayesFactors.score_stats(model, null_fit, effect1, columns=[0, 1])
    assert stats.wald >= 0 and stats.score_fixed >= 0 and stats.t_score >= 0
    assert_allclose(BayesFactors.chi2_pvalue(0.0, 2), 1.0)
    assert np.isnan(BayesFactors.chi2_pvalue(1.0, 0))


def test_pvalues_use_effect_rank(model, null_fit):
    fit1 = model.optimize_lambda(kappa=1, columns=[0, 1])
    effect1 = model.gls_effect(fit1.lambda_check, fit1.tau_check, columns=[0, 1])
    effect0 = model.gls_effect(null_fit.lambda_check, null_fit.tau_check, columns=[0, 1])
    wald = BayesFactors.wald_stat(effect1)
    score = BayesFactors.score_stat_fixed(model, null_fit, [0, 1])
    assert BayesFactors.wald_pvalue(wald, effect1) == pytest.approx(BayesFactors.chi2_pvalue(wald, 2))
    assert BayesFactors.score_pvalue(score, effect0) == pytest.approx(BayesFactors.chi2_pvalue(score, 2))
    assert np.isnan(BayesFactors.wald_pvalue(np.nan, effect1))


def test_score_needs_null_anchor(model):
    fit1 = model.optimize_lambda(kappa=1, columns=[0])
    with pytest.raises(ValueError):
        BayesFactors.score_stat_fixed(model, fit1, [0])


@pytest.mark.parametrize("m", [m for m in dir(BayesFactors) if not m.startswith("_")])
def test_docstring(m):
    check_docstring(getattr(BayesFactors, m).__doc__, indent=8)
