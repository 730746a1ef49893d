from typing import ClassVar, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pyparsing import ParseException

from ..toolkit import DEFAULT_PHI_GRID, EffectPrior, McmcConfig, P1Spec, Parser, TsvDao
from ..toolkit.oracle import DEFAULT_QUAD_TOL, DEFAULT_SAMPLE_SIZES, DEFAULT_SWEEP_PHI
from ..toolkit.settest import DEFAULT_PI_TWO_WAY, DEFAULT_PIS
from ..toolkit.sim import SimConfig


def _split(value):
    if isinstance(value, str):
        return [v for v in value.replace(" ", "").split(",") if v]
    return value


def _echo_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_echo_value(v) for v in value)
    return str(value)


class RunConfig(BaseModel):
    """
    Parameters shared by all commands.
    """

    model_config = ConfigDict(extra="forbid")

    _NOT_ECHOED: ClassVar[set] = {"threads", "out"}

    seed: Optional[int] = Field(
        None,
        title="Seed",
        description="Master seed, every chain, set and replicate draws from its own stream spawned from it.",
    )
    threads: int = Field(
        1,
        ge=1,
        title="Threads",
        description="Worker threads, results do not depend on it.",
    )
    out: str = Field(
        ".",
        title="Output Directory",
        description="Directory the result tables are written to.",
    )

    def echo(self, command: str) -> List[str]:
        """
        Header lines repeating the effective configuration. Thread count and output directory are left out so
        that reruns produce identical files.
        """
        dumped = self.model_dump(exclude=self._NOT_ECHOED)
        return [f"command={command}"] + [f"{k}={_echo_value(v)}" for k, v in sorted(dumped.items())]


class DataConfig(RunConfig):
    """
    Input files of the commands analysing observed data.
    """

    phenotype: str = Field(
        ...,
        title="Phenotype File",
        description="Tab separated `sample_id` then one column per phenotype.",
    )
    genotypes: str = Field(
        ...,
        title="Genotype File",
        description="Tab separated `snp_id`, `position`, `maf` then one dosage column per sample.",
    )
    covariates: Optional[str] = Field(
        None,
        title="Covariate File",
        description="Tab separated `sample_id` then covariates, intercept only when missing.",
    )
    kinship: Optional[str] = Field(
        None,
        title="Kinship File",
        description="Symmetric kinship with a `sample_id` column and one column per sample.",
    )
    estimate_kinship: bool = Field(
        False,
        title="Estimate Kinship",
        description="Estimate the kinship from the genotypes when no kinship file is given.",
    )
    phenotype_name: Optional[str] = Field(
        None,
        title="Phenotype Name",
        description="Phenotype column to analyse, the first one by default.",
    )
    phi_grid: List[float] = Field(
        list(DEFAULT_PHI_GRID),
        title="Effect Scale Grid",
        description="Comma separated effect scales the Bayes factors are averaged over.",
    )

    @field_validator("phi_grid", mode="before")
    @classmethod
    def split_phi_grid(cls, value):
        return _split(value)

    @field_validator("phi_grid")
    @classmethod
    def check_phi_grid(cls, value):
        if not value:
            raise ValueError("We expect a non-empty phi grid")
        if not all(np.isfinite(phi) and phi > 0 for phi in value):
            raise ValueError(f"We expect positive finite effect scales but got {value}")
        return value

    @model_validator(mode="after")
    def check_kinship(self):
        if self.kinship is not None and self.estimate_kinship:
            raise ValueError("Give either a kinship file or estimate_kinship, not both")
        return self

    def to_dao(self, sets: Optional[str] = None) -> TsvDao:
        return TsvDao(
            phenotype=self.phenotype,
            genotypes=self.genotypes,
            covariates=self.covariates,
            kinship=self.kinship,
            sets=sets,
            estimate_kinship=self.estimate_kinship,
        )


class ScanConfig(DataConfig):
    """
    Single-SNP Bayes factor scan with Wald and score statistics.
    """

    prior: str = Field(
        "spike_slab",
        title="Single SNP Prior",
        description="Prior expression of one effect, e.g. `spike_slab`, `scaled_v(c=2)`.",
    )
    kappa1: bool = Field(
        True,
        title="Full Anchor",
        description="Also fit every SNP under the alternative for the second ABF and the Wald statistic.",
    )
    alpha: float = Field(0.05, gt=0, lt=1, title="FDR Level", description="Target false discovery rate.")
    pi0: Union[float, Literal["estimate"]] = Field(
        "estimate",
        title="Null Proportion",
        description=(
            "Prior null proportion of the Bayesian FDR, a number in (0, 1] or `estimate` for the EM estimate over the "
            "scanned SNPs. At 1 the Bayesian FDR never rejects."
        ),
    )

    @field_validator("prior")
    @classmethod
    def check_prior(cls, value):
        try:
            prior = Parser.parse_prior(value).build([1.0])
        except ParseException as e:
            raise ValueError(f"Cannot parse prior '{value}' because of '{e}'")
        if prior.p != 1:
            raise ValueError(f"Prior '{value}' is not a single-SNP prior")
        return value

    @field_validator("pi0")
    @classmethod
    def check_pi0(cls, value):
        if value != "estimate" and not 0 < value <= 1:
            raise ValueError(f"We expect pi0 in (0, 1] or 'estimate' but got {value}")
        return value

    def to_prior(self) -> EffectPrior:
        return Parser.parse_prior(self.prior).build([1.0])


class SetTestConfig(DataConfig):
    """
    Bayesian SNP set test with fixed or EM estimated component weights.
    """

    sets: str = Field(
        ...,
        title="Set File",
        description="Tab separated `set_id`, `snp_id` membership rows.",
    )
    per_set_phenotype: bool = Field(
        False,
        title="Per Set Phenotype",
        description="Pair every set with the phenotype column of the same name.",
    )
    mode: Literal["fixed", "em"] = Field(
        "em",
        title="Weight Mode",
        description="`fixed` keeps the component weights, `em` estimates them pooled over sets.",
    )
    two_way: bool = Field(
        False,
        title="Two Way Mixture",
        description="Mix burden and SKAT only, leaving out the common variant component.",
    )
    pis: List[float] = Field(
        list(DEFAULT_PIS),
        title="Component Weights",
        description="Comma separated weights of burden, SKAT and common variant models.",
    )
    pi_two_way: float = Field(
        DEFAULT_PI_TWO_WAY,
        ge=0,
        le=1,
        title="Burden Weight",
        description="Burden weight of the two way mixture.",
    )
    p0: Optional[float] = Field(
        None,
        ge=0,
        le=1,
        title="Null Probability",
        description="Fixed prior null probability of a set, estimated by EM when missing.",
    )
    skato_rho: Optional[float] = Field(
        None,
        ge=0,
        le=1,
        title="SKAT-O Rho",
        description="Also report the SKAT-O prior Bayes factor with this rho.",
    )
    alpha: float = Field(0.05, gt=0, lt=1, title="FDR Level", description="Target false discovery rate.")

    @field_validator("pis", mode="before")
    @classmethod
    def split_pis(cls, value):
        return _split(value)

    @field_validator("pis")
    @classmethod
    def check_pis(cls, value):
        if len(value) != 3:
            raise ValueError(f"We expect three component weights but got {value}")
        if any(p < 0 for p in value) or abs(sum(value) - 1) > 1e-12:
            raise ValueError(f"We expect component weights to be a probability vector but got {value}")
        return value

    @model_validator(mode="after")
    def check_phenotype(self):
        if self.per_set_phenotype and self.phenotype_name is not None:
            raise ValueError("Give either phenotype_name or per_set_phenotype, not both")
        return self

    def components(self) -> List[str]:
        return ["burden", "skat"] if self.two_way else ["burden", "skat", "cv"]

    def initial_pis(self) -> List[float]:
        return [self.pi_two_way, 1 - self.pi_two_way] if self.two_way else list(self.pis)

    def to_dao(self, sets: Optional[str] = None) -> TsvDao:
        return super().to_dao(sets if sets is not None else self.sets)


class FinemapConfig(DataConfig):
    """
    Bayesian variable selection of a region by Metropolis-Hastings over inclusion vectors.
    """

    p1: str = Field(
        "grid(-2.71, -1.40, 17)",
        title="Inclusion Probability",
        description="Prior inclusion probability, `0.002`, `point(0.002)` or `grid(a, b, n)` on log10 scale.",
    )
    n_burn: int = Field(150_000, ge=0, title="Burn In", description="Discarded steps per chain.")
    n_keep: int = Field(300_000, ge=1, title="Kept Steps", description="Recorded steps per chain.")
    n_chains: int = Field(2, ge=1, title="Chains", description="Independent chains.")
    top_models: int = Field(20, ge=1, title="Top Models", description="Rows of the model table.")
    credible_level: float = Field(
        0.95,
        gt=0,
        le=1,
        title="Credible Level",
        description="Cumulative PIP of the reported credible set.",
    )
    exact_check: bool = Field(
        False,
        title="Exact Check",
        description="Also enumerate all models of a small region and report the total variation distance.",
    )

    @field_validator("p1")
    @classmethod
    def check_p1(cls, value):
        try:
            Parser.parse_p1(value)
        except ParseException as e:
            raise ValueError(f"Cannot parse inclusion probability '{value}' because of '{e}'")
        return value

    def to_p1(self) -> P1Spec:
        return Parser.parse_p1(self.p1)

    def to_mcmc_config(self) -> McmcConfig:
        return McmcConfig(
            n_burn=self.n_burn,
            n_keep=self.n_keep,
            n_chains=self.n_chains,
            seed=self.seed,
            top_models=self.top_models,
        )


class SimulateConfig(RunConfig):
    """
    Labelled panel of simulated SNP sets, each with its own phenotype.
    """

    _OVERRIDES: ClassVar[List[str]] = [
        "n_individuals",
        "n_sets",
        "snps_per_set",
        "null_fraction",
        "scenario_mix",
        "causal_fraction",
        "effect_c",
        "protective_fraction",
        "maf_range",
        "ld_block_size",
    ]

    profile: Literal["desk", "full"] = Field(
        "desk",
        title="Profile",
        description="`desk` is 200 sets of 100 SNPs in 500 samples, `full` is 5000 sets of 1000 SNPs in 2000.",
    )
    n_individuals: Optional[int] = Field(None, title="Samples", description="Samples per set.")
    n_sets: Optional[int] = Field(None, title="Sets", description="Number of SNP sets.")
    snps_per_set: Optional[int] = Field(None, title="Set Size", description="SNPs in every set.")
    null_fraction: Optional[float] = Field(None, title="Null Fraction", description="Share of null sets.")
    scenario_mix: Optional[List[float]] = Field(
        None,
        title="Scenario Mix",
        description="Probabilities of sign-consistent, sign-mixed and common variant alternatives.",
    )
    causal_fraction: Optional[float] = Field(
        None, title="Causal Fraction", description="Share of causal SNPs in a rare variant alternative."
    )
    effect_c: Optional[float] = Field(None, title="Effect Scale", description="Effect size multiplier.")
    protective_fraction: Optional[float] = Field(
        None, title="Protective Fraction", description="Share of protective causal SNPs in sign-mixed sets."
    )
    maf_range: Optional[List[float]] = Field(
        None, title="MAF Range", description="Comma separated bounds of rare variant MAFs."
    )
    ld_block_size: Optional[int] = Field(None, title="LD Block", description="SNPs sharing one LD factor.")

    @field_validator("scenario_mix", "maf_range", mode="before")
    @classmethod
    def split_vectors(cls, value):
        return _split(value)

    @model_validator(mode="after")
    def check_panel(self):
        self.to_sim_config()
        return self

    def overrides(self) -> dict:
        values = {name: getattr(self, name) for name in self._OVERRIDES if getattr(self, name) is not None}
        for name in ["scenario_mix", "maf_range"]:
            if name in values:
                values[name] = tuple(values[name])
        return values

    def to_sim_config(self) -> SimConfig:
        factory = SimConfig.desk if self.profile == "desk" else SimConfig.full
        return factory(**self.overrides(), seed=self.seed)


class ValidateAbfConfig(RunConfig):
    """
    Accuracy sweep of the ABF against the numerical Bayes factor on nested subsamples.
    """

    sample_sizes: List[int] = Field(
        list(DEFAULT_SAMPLE_SIZES),
        title="Sample Sizes",
        description="Comma separated subsample sizes.",
    )
    n_snps: int = Field(20, ge=1, title="SNPs", description="Candidate SNPs tested one at a time.")
    phi: float = Field(DEFAULT_SWEEP_PHI, gt=0, title="Effect Scale", description="Effect scale of the prior.")
    quad_tol: float = Field(
        DEFAULT_QUAD_TOL,
        gt=0,
        lt=1,
        title="Quadrature Tolerance",
        description="Relative tolerance of the numerical integration.",
    )

    @field_validator("sample_sizes", mode="before")
    @classmethod
    def split_sample_sizes(cls, value):
        return _split(value)

    @field_validator("sample_sizes")
    @classmethod
    def check_sample_sizes(cls, value):
        if not value:
            raise ValueError("We expect at least one sample size")
        if min(value) < 5:
            raise ValueError(f"We expect sample sizes of at least 5 but got {min(value)}")
        return value
