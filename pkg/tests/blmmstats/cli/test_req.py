import pytest
from pydantic import ValidationError

from src.blmmstats.cli.req import (
    FinemapConfig,
    RunConfig,
    ScanConfig,
    SetTestConfig,
    SimulateConfig,
    ValidateAbfConfig,
)
from src.blmmstats.toolkit.priors import PriorKind

DATA = {"phenotype": "p.tsv", "genotypes": "g.tsv"}


def test_echo_is_sorted_and_skips_output_settings():
    config = ScanConfig(**DATA, seed=3, threads=4, out="somewhere", phi_grid="0.1,0.4")
    echo = config.echo("scan")
    assert echo[0] == "command=scan"
    assert echo[1:] == sorted(echo[1:])
    assert "seed=3" in echo and "phi_grid=0.1,0.4" in echo and "kappa1=true" in echo
    assert "covariates=none" in echo
    assert not any(line.startswith(("threads=", "out=")) for line in echo)


def test_unknown_field_is_rejected():
    with pytest.raises(ValidationError):
        RunConfig(seeds=1)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(phi_grid=""),
        dict(phi_grid="0.1,-0.2"),
        dict(kinship="k.tsv", estimate_kinship=True),
        dict(prior="skat(rho=1)"),
        dict(prior="unknown"),
        dict(pi0=0.0),
        dict(pi0="guess"),
        dict(alpha=1.0),
        dict(threads=0),
    ],
)
def test_scan_validation(kwargs):
    with pytest.raises(ValidationError):
        ScanConfig(**DATA, **kwargs)


def test_scan_prior():
    assert ScanConfig(**DATA).to_prior().kind == PriorKind.spike_slab
    assert ScanConfig(**DATA).pi0 == "estimate"
    config = ScanConfig(**DATA, prior="scaled_v(c=2)", pi0="estimate")
    assert config.to_prior().c == 2.0
    assert config.pi0 == "estimate"
    assert ScanConfig(**DATA, pi0="0.5").pi0 == 0.5


def test_settest_config():
    config = SetTestConfig(**DATA, sets="s.tsv", pis="0.5, 0.3, 0.2")
    assert config.pis == [0.5, 0.3, 0.2]
    assert config.components() == ["burden", "skat", "cv"]
    assert config.initial_pis() == [0.5, 0.3, 0.2]
    two_way = SetTestConfig(**DATA, sets="s.tsv", two_way=True, pi_two_way=0.7)
    assert two_way.components() == ["burden", "skat"]
    assert two_way.initial_pis() == pytest.approx([0.7, 0.3])


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(pis="0.5,0.5"),
        dict(pis="0.5,0.6,-0.1"),
        dict(mode="bayes"),
        dict(p0=1.5),
        dict(skato_rho=2.0),
        dict(per_set_phenotype=True, phenotype_name="y"),
    ],
)
def test_settest_validation(kwargs):
    with pytest.raises(ValidationError):
        SetTestConfig(**DATA, sets="s.tsv", **kwargs)


def test_finemap_config():
    config = FinemapConfig(**DATA, seed=5, n_burn=10, n_keep=20)
    assert config.to_p1().n_points == 17
    mcmc = config.to_mcmc_config()
    assert (mcmc.n_burn, mcmc.n_keep, mcmc.seed) == (10, 20, 5)
    for kwargs in [dict(n_keep=0), dict(p1="grid(-1, -2)"), dict(credible_level=0.0), dict(n_chains=0)]:
        with pytest.raises(ValidationError):
            FinemapConfig(**DATA, **kwargs)


def test_simulate_overrides():
    config = SimulateConfig(seed=2, n_sets="10", scenario_mix="0.2,0.3,0.5", maf_range="0.01,0.05")
    sim = config.to_sim_config()
    assert (sim.n_sets, sim.snps_per_set, sim.seed) == (10, 100, 2)
    assert sim.scenario_mix == (0.2, 0.3, 0.5)
    assert sim.maf_range == (0.01, 0.05)
    assert SimulateConfig(profile="full").to_sim_config().n_sets == 5000


@pytest.mark.parametrize(
    "kwargs",
    [dict(profile="huge"), dict(scenario_mix="0.5,0.6,0.1"), dict(null_fraction=2.0), dict(maf_range="0.3,0.1")],
)
def test_simulate_validation(kwargs):
    with pytest.raises(ValidationError):
        SimulateConfig(**kwargs)


def test_validate_abf_config():
    assert ValidateAbfConfig(sample_sizes="50, 100").sample_sizes == [50, 100]
    for kwargs in [dict(sample_sizes=""), dict(sample_sizes="3"), dict(quad_tol=1.0), dict(phi=0.0)]:
        with pytest.raises(ValidationError):
            ValidateAbfConfig(**kwargs)
