from concurrent.futures import ThreadPoolExecutor
from itertools import combinations

import numpy as np
import pandas as pd
import pytest

from src.blmmstats.toolkit.abf import BayesFactors
from src.blmmstats.toolkit.errors import EmptyChainError, InputError
from src.blmmstats.toolkit.finemap import (
    ADD,
    PIP_BATCHES,
    REMOVE,
    REVERSE_MOVE,
    SWAP,
    FinemapReport,
    McmcConfig,
    PosteriorScorer,
    WhitenedData,
    chain_agreement,
    enumerate_posterior,
    enumeration_pip,
    log_hastings_ratio,
    log_prior_gamma,
    mcmc_finemap,
    move_probabilities,
    proposal_log_prob,
    total_variation,
    whiten,
)
from src.blmmstats.toolkit.lmm import LinearMixedModel
from src.blmmstats.toolkit.priors import EffectPrior, P1Spec
from src.blmmstats.toolkit.testing import TestData, assert_probabilities, check_docstring

PHIS = (0.2, 0.8)


@pytest.fixture(scope="module")
def model():
    beta = [0.0, 0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
    return LinearMixedModel(TestData.related_dataset(n=120, p=8, seed=17, beta=beta))


@pytest.fixture(scope="module")
def null_fit(model):
    return model.optimize_lambda(kappa=0)


@pytest.fixture(scope="module")
def data(model, null_fit):
    return whiten(model, null_fit)


@pytest.fixture(scope="module")
def p1():
    return P1Spec(point=0.1)


@pytest.fixture(scope="module")
def exact(data, p1):
    return enumerate_posterior(data, p1, PHIS)


def test_log_prior_closed_form():
    p = 508
    assert log_prior_gamma(np.zeros(p, dtype=int), P1Spec(point=1 / p)) == pytest.approx(p * np.log(1 - 1 / p))
    gamma = np.zeros(10, dtype=int)
    gamma[[2, 5]] = 1
    assert log_prior_gamma(gamma, P1Spec(point=0.2)) == pytest.approx(2 * np.log(0.2) + 8 * np.log(0.8))


def test_log_prior_averages_grid_on_natural_scale():
    spec = P1Spec.grid(-2.0, -1.0, n_points=5)
    gamma = np.array([1, 0, 0, 1, 0, 0])
    expected = np.log(np.mean([q**2 * (1 - q) ** 4 for q in spec.grid_values]))
    assert log_prior_gamma(gamma, spec) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("k, p", [(0, 5), (1, 5), (4, 5), (5, 5), (0, 1), (1, 1)])
def test_move_probabilities(k, p):
    probs = move_probabilities(k, p)
    assert sum(probs.values()) == pytest.approx(1.0)
    assert (ADD in probs) == (k < p)
    assert (REMOVE in probs) == (k > 0)
    assert (SWAP in probs) == (0 < k < p)


def test_whitened_abf_matches_null_anchor_abf(model, null_fit, data):
    for included in [(1,), (0, 3), (1, 2, 5)]:
        effect = model.gls_effect(null_fit.lambda_check, null_fit.tau_check, columns=list(included))
        expected = BayesFactors.abf_phi_grid(effect, EffectPrior.spike_slab((1,) * len(included)), PHIS)
        assert data.log10_abf(included, PHIS) == pytest.approx(expected, rel=1e-8, abs=1e-10)
    assert data.log10_abf((), PHIS) == 0.0


def _neighbours(included, p):
    inside = set(included)
    outside = [j for j in range(p) if j not in inside]
    for j in outside:
        yield ADD, tuple(sorted(inside | {j}))
    for j in inside:
        yield REMOVE, tuple(sorted(inside - {j}))
    for drop in inside:
        for add in outside:
            yield SWAP, tuple(sorted((inside - {drop}) | {add}))


def test_exact_posterior_is_stationary_under_kernel():
    model = LinearMixedModel(TestData.related_dataset(n=60, p=4, seed=2, beta=[0.6, 0.0, 0.3, 0.0]))
    data = whiten(model, model.optimize_lambda(kappa=0))
    p1 = P1Spec(point=0.3)
    scorer = PosteriorScorer(data, p1, PHIS)
    states = [c for k in range(5) for c in combinations(range(4), k)]
    index = {s: i for i, s in enumerate(states)}
    table = enumerate_posterior(data, p1, PHIS)
    pi = table["posterior"].to_numpy()
    assert [tuple(i) for i in table["included"]] == states

    P = np.zeros((len(states), len(states)))
    for s in states:
        current = scorer.state(s)
        for move, target in _neighbours(s, 4):
            proposed = scorer.state(target)
            q = np.exp(proposal_log_prob(move, current.size, 4))
            P[index[s], index[target]] += q * min(1.0, np.exp(log_hastings_ratio(current, proposed, move)))
            flow = log_hastings_ratio(current, proposed, move)
            back = log_hastings_ratio(proposed, current, REVERSE_MOVE[move])
            assert flow == pytest.approx(-back, abs=1e-10)
        P[index[s], index[s]] = 1.0 - P[index[s]].sum()
    assert pi @ P == pytest.approx(pi, abs=1e-12)


def _region(p):
    beta = np.zeros(p)
    beta[1] = 0.9
    model = LinearMixedModel(TestData.related_dataset(n=120, p=p, seed=17, beta=beta))
    return whiten(model, model.optimize_lambda(kappa=0))


@pytest.mark.parametrize("p", [4, 8, 10])
def test_sampler_matches_enumeration(p, p1):
    data = _region(p)
    exact = enumerate_posterior(data, p1, PHIS)
    config = McmcConfig(n_burn=2000, n_keep=50_000, n_chains=2, seed=42)
    report = mcmc_finemap(data, p1, PHIS, config)
    assert total_variation(report, exact) < 0.05
    assert report.pip.to_numpy() == pytest.approx(enumeration_pip(exact, data.p), abs=0.05)
    assert report.pip.idxmax() == "snp1"
    assert_probabilities(report.pip)
    assert report.size_distribution.sum() == pytest.approx(1.0)
    assert report.model_table["posterior"].is_monotonic_decreasing
    assert chain_agreement(report.chains) < 3


def test_flat_single_snp_recovers_prior():
    rng = np.random.default_rng(3)
    n = 50
    data = WhitenedData(
        y=rng.standard_normal(n), X=np.ones((n, 1)), G=np.zeros((n, 1)), tau=1.0, lam=0.0, snp_ids=["flat"]
    )
    p1 = P1Spec(point=0.3)
    assert data.log10_abf([0], PHIS) == pytest.approx(0.0, abs=1e-12)
    report = mcmc_finemap(data, p1, PHIS, McmcConfig(n_burn=500, n_keep=20_000, n_chains=2, seed=5))
    se = np.sqrt(sum(c.pip_se[0] ** 2 for c in report.chains)) / len(report.chains)
    assert abs(report.pip["flat"] - 0.3) < 3 * se
    assert enumeration_pip(enumerate_posterior(data, p1, PHIS), 1)[0] == pytest.approx(0.3)


@pytest.mark.parametrize("spec", [P1Spec(point=0.1), P1Spec(point=0.49), P1Spec.grid(-2.71, -1.40, n_points=17)])
def test_log_prior_decreases_with_model_size(spec):
    p = 10
    values = [log_prior_gamma(np.r_[np.ones(k, dtype=int), np.zeros(p - k, dtype=int)], spec) for k in range(p + 1)]
    assert np.all(np.diff(values) < 0)


def test_batch_standard_errors(data, p1):
    report = mcmc_finemap(data, p1, PHIS, McmcConfig(n_burn=100, n_keep=5000, n_chains=1, seed=3))
    chain = report.chains[0]
    assert chain.batch_pip.shape == (PIP_BATCHES, data.p)
    assert chain.batch_pip.mean(axis=0) == pytest.approx(chain.pip, abs=1e-12)
    assert np.all(chain.pip_se >= 0)
    short = mcmc_finemap(data, p1, PHIS, McmcConfig(n_burn=0, n_keep=1, n_chains=1, seed=3)).chains[0]
    assert short.pip_se == pytest.approx(np.sqrt(short.pip * (1 - short.pip)))


def test_seeded_runs_are_identical(data, p1):
    config = McmcConfig(n_burn=100, n_keep=500, n_chains=3, seed=7)
    first = mcmc_finemap(data, p1, PHIS, config)
    second = mcmc_finemap(data, p1, PHIS, config)
    with ThreadPoolExecutor(max_workers=3) as executor:
        threaded = mcmc_finemap(data, p1, PHIS, config, executor)
    for other in [second, threaded]:
        pd.testing.assert_series_equal(first.pip, other.pip)
        pd.testing.assert_frame_equal(first.model_table, other.model_table)
        pd.testing.assert_frame_equal(first.chain_table(), other.chain_table())


def test_enumeration(data, exact):
    assert len(exact) == 2**data.p
    assert exact["posterior"].sum() == pytest.approx(1.0)
    assert exact.loc[0, "model"] == "none"
    with pytest.raises(InputError):
        enumerate_posterior(data, P1Spec(point=0.1), PHIS, max_p=3)


def test_credible_set():
    report = FinemapReport(
        pip=pd.Series([0.1, 0.7, 0.25, 0.05], index=["a", "b", "c", "d"]),
        model_table=pd.DataFrame(),
        size_distribution=pd.Series(dtype=float),
        chains=[],
    )
    assert report.credible_set(0.9) == ["b", "c"]
    assert report.credible_set(0.7) == ["b"]
    low = FinemapReport(pd.Series([0.1, 0.2], index=["a", "b"]), pd.DataFrame(), pd.Series(dtype=float), [])
    assert low.credible_set(0.95) == []
    with pytest.raises(ValueError):
        report.credible_set(0.0)


@pytest.mark.parametrize(
    "kwargs, error",
    [
        (dict(n_keep=0), EmptyChainError),
        (dict(n_burn=-1), ValueError),
        (dict(n_chains=0), ValueError),
        (dict(top_models=0), ValueError),
    ],
)
def test_invalid_mcmc_config(kwargs, error):
    with pytest.raises(error):
        McmcConfig(**kwargs)


def test_single_chain_agreement(data, p1):
    report = mcmc_finemap(data, p1, PHIS, McmcConfig(n_burn=0, n_keep=50, n_chains=1, seed=1))
    assert chain_agreement(report.chains) == 0.0
    assert report.chain_table()["n_kept"].tolist() == [50]


def test_docstring():
    check_docstring(log_prior_gamma.__doc__, indent=4)
