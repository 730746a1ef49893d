import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg as la
import scipy.stats as st

from .errors import DegenerateKinshipError, InputError, NoCommonVariantError
from .lmm import KINSHIP_CLAMP, Dataset, estimate_kinship
from .utils import spawn_generators

LD_CORRELATION = 0.7
COMMON_MAF = 0.05
NULL_SLOPE = 0.5
RARE_MAF_RANGE = (0.001, 0.05)
CV_MAF_RANGE = (0.001, 0.5)

_logger = logging.getLogger(__name__)


class Scenario(str, Enum):
    null = "null"
    sign_consistent = "SignConsistent"
    sign_mixed = "SignMixed"
    common_variant = "CommonVariant"


ALTERNATIVES = (Scenario.sign_consistent, Scenario.sign_mixed, Scenario.common_variant)


@dataclass
class SimConfig:
    """
    Geometry and effect model of a simulated SNP set panel.

    Arguments:
        n_individuals: samples per set
        n_sets: number of SNP sets
        snps_per_set: SNPs in every set
        null_fraction: share of sets without causal SNPs
        scenario_mix: probabilities of sign-consistent, sign-mixed and common variant alternatives
        causal_fraction: share of causal SNPs in a rare variant alternative set
        effect_c: effect scale $c$ in $\\beta_j = c|\\log_{10}m_j|$
        protective_fraction: share of protective causal SNPs in sign-mixed sets
        maf_range: MAF range of rare variant sets, common variant sets use `(maf_range[0], 0.5]`
        ld_block_size: SNPs sharing one latent LD factor
        seed: master seed
    """

    n_individuals: int = 500
    n_sets: int = 200
    snps_per_set: int = 100
    null_fraction: float = 0.7
    scenario_mix: Tuple[float, float, float] = (1.0, 0.0, 0.0)
    causal_fraction: float = 0.2
    effect_c: float = 0.1
    protective_fraction: float = 0.4
    maf_range: Tuple[float, float] = RARE_MAF_RANGE
    ld_block_size: int = 10
    seed: Optional[int] = None

    def __post_init__(self):
        for name in ["n_individuals", "n_sets", "snps_per_set", "ld_block_size"]:
            if getattr(self, name) < 1:
                raise InputError(f"We expect {name} >= 1 but got {getattr(self, name)}")
        if not 0 <= self.null_fraction <= 1:
            raise InputError(f"We expect null_fraction in [0, 1] but got {self.null_fraction}")
        mix = np.asarray(self.scenario_mix, dtype=float)
        if mix.size != 3 or np.any(mix < 0) or abs(mix.sum() - 1) > 1e-12:
            raise InputError(f"We expect scenario_mix to be a probability 3-vector but got {self.scenario_mix}")
        if not 0 < self.causal_fraction <= 1:
            raise InputError(f"We expect causal_fraction in (0, 1] but got {self.causal_fraction}")
        if not 0 <= self.protective_fraction <= 1:
            raise InputError(f"We expect protective_fraction in [0, 1] but got {self.protective_fraction}")
        lo, hi = self.maf_range
        if not 0 < lo <= hi <= 0.5:
            raise InputError(f"We expect maf_range inside (0, 0.5] but got {self.maf_range}")

    @classmethod
    def desk(cls, **kwargs) -> "SimConfig":
        """Scaled panel: 200 sets of 100 SNPs, 500 individuals, 140 null sets."""
        return cls(**{**dict(n_individuals=500, n_sets=200, snps_per_set=100, null_fraction=0.7), **kwargs})

    @classmethod
    def full(cls, **kwargs) -> "SimConfig":
        """Full panel: 5000 sets of 1000 SNPs, 2000 individuals, 3500 null sets."""
        return cls(**{**dict(n_individuals=2000, n_sets=5000, snps_per_set=1000, null_fraction=0.7), **kwargs})

    @property
    def n_null(self) -> int:
        return int(round(self.null_fraction * self.n_sets))


def log_uniform_mafs(p: int, maf_range: Tuple[float, float], rng: np.random.Generator) -> np.ndarray:
    lo, hi = maf_range
    return 10.0 ** rng.uniform(np.log10(lo), np.log10(hi), size=p)


def simulate_haplotypes(
    n_haplotypes: int, mafs: np.ndarray, ld_block_size: int, rng: np.random.Generator
) -> np.ndarray:
    """
    0/1 haplotypes thresholded from a latent Gaussian, SNPs of one LD block share a factor with correlation
    0.7 so that each allele is carried with probability equal to its MAF.
    """
    p = mafs.size
    if ld_block_size == 1:
        z = rng.standard_normal((n_haplotypes, p))
    else:
        n_blocks = -(-p // ld_block_size)
        shared = np.repeat(rng.standard_normal((n_haplotypes, n_blocks)), ld_block_size, axis=1)[:, :p]
        z = np.sqrt(LD_CORRELATION) * shared + np.sqrt(1 - LD_CORRELATION) * rng.standard_normal((n_haplotypes, p))
    return (z < st.norm.ppf(mafs)).astype(float)


def simulate_genotypes(
    config: SimConfig,
    rng: np.random.Generator,
    maf_range: Optional[Tuple[float, float]] = None,
    n: Optional[int] = None,
    p: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Dosage matrix `n x p` with block LD and log-uniform target MAFs.

    Returns:
        tuple of genotypes in $\\{0, 1, 2\\}$ and target MAFs
    """
    n = n or config.n_individuals
    p = p or config.snps_per_set
    mafs = log_uniform_mafs(p, maf_range or config.maf_range, rng)
    haplotypes = simulate_haplotypes(2 * n, mafs, config.ld_block_size, rng)
    return haplotypes[0::2] + haplotypes[1::2], mafs


def simulate_sibling_pairs(
    n: int, p: int, rng: np.random.Generator, maf_range: Tuple[float, float] = (COMMON_MAF, 0.5)
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Genotypes of `n` individuals grouped in sibling pairs (rows `2i` and `2i + 1`).

    Each family has two unrelated parents, every child inherits one random haplotype of each parent per SNP, so
    siblings share half of their genome on average. An odd `n` drops the last child.
    """
    if n < 1 or p < 1:
        raise InputError(f"We need n >= 1 and p >= 1 but got n={n}, p={p}")
    n_families = -(-n // 2)
    mafs = log_uniform_mafs(p, maf_range, rng)
    parents = (rng.random((n_families, 4, p)) < mafs).astype(float)
    children = []
    for _ in range(2):
        from_father = rng.integers(0, 2, size=(n_families, p))
        from_mother = rng.integers(0, 2, size=(n_families, p)) + 2
        idx = np.arange(n_families)[:, None]
        snp = np.arange(p)[None, :]
        children.append(parents[idx, from_father, snp] + parents[idx, from_mother, snp])
    genotypes = np.stack(children, axis=1).reshape(2 * n_families, p)
    return genotypes[:n], mafs


def simulate_covariate(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(n)


def simulate_null_phenotype(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """$y = 0.5x + e$, $e \\sim N(0, I)$."""
    x = np.asarray(x, dtype=float)
    return NULL_SLOPE * x + rng.standard_normal(x.size)


def rare_effects(mafs: np.ndarray, c: float) -> np.ndarray:
    """$\\beta_j = c|\\log_{10}m_j|$."""
    return c * np.abs(np.log10(mafs))


def simulate_rare_alternative(
    genotypes: np.ndarray,
    mafs: np.ndarray,
    x: np.ndarray,
    config: SimConfig,
    scenario: Scenario,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Phenotype with $\\lceil fp \\rceil$ causal SNPs picked uniformly, $f$ being `causal_fraction`.

    Sign-consistent sets use $c$ for every causal SNP, sign-mixed sets flip the sign for a `protective_fraction`
    share of them.

    Returns:
        tuple of phenotype and per-SNP effects (zero for non-causal SNPs)
    """
    if scenario not in (Scenario.sign_consistent, Scenario.sign_mixed):
        raise ValueError(f"We expect a rare variant scenario but got {scenario}")
    p = genotypes.shape[1]
    n_causal = int(np.ceil(config.causal_fraction * p))
    causal = rng.choice(p, size=n_causal, replace=False)
    c = np.full(n_causal, abs(config.effect_c))
    if scenario == Scenario.sign_mixed:
        n_protective = int(round(config.protective_fraction * n_causal))
        c[rng.choice(n_causal, size=n_protective, replace=False)] *= -1
    beta = np.zeros(p)
    beta[causal] = rare_effects(np.asarray(mafs)[causal], 1.0) * c
    return simulate_null_phenotype(x, rng) + genotypes @ beta, beta


def simulate_cv_alternative(
    genotypes: np.ndarray, mafs: np.ndarray, x: np.ndarray, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Phenotype driven by one, two or three common SNPs ($\\mathrm{MAF} \\geq 0.05$) with $\\beta_i \\sim N(0, 1)$.
    """
    common = np.nonzero(np.asarray(mafs) >= COMMON_MAF)[0]
    if common.size == 0:
        raise NoCommonVariantError(f"No SNP with MAF >= {COMMON_MAF} among {len(mafs)}")
    size = min(int(rng.integers(1, 4)), common.size)
    causal = rng.choice(common, size=size, replace=False)
    beta = np.zeros(genotypes.shape[1])
    beta[causal] = rng.standard_normal(size)
    return simulate_null_phenotype(x, rng) + genotypes @ beta, beta


def kinship_factor(K: np.ndarray) -> np.ndarray:
    """`L` with $LL' = K$ from the clamped eigendecomposition."""
    d, U = la.eigh(np.asarray(K, dtype=float))
    if d.min() < -KINSHIP_CLAMP * max(1.0, d.max()):
        raise DegenerateKinshipError(f"Kinship has eigenvalue {d.min():.3e}, cannot draw a random effect")
    return U * np.sqrt(np.clip(d, 0.0, None))


def simulate_with_random_effect(
    X: np.ndarray,
    alpha: Sequence[float],
    K: np.ndarray,
    lambda_true: float,
    tau_true: float,
    rng: np.random.Generator,
    G: Optional[np.ndarray] = None,
    beta: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """
    $y = X\\alpha + G\\beta + u + e$ with $u \\sim N(0, \\lambda\\tau^{-1}K)$ and $e \\sim N(0, \\tau^{-1}I)$.
    """
    if lambda_true < 0 or tau_true <= 0:
        raise ValueError(f"Invalid variance parameters lambda={lambda_true}, tau={tau_true}")
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    mean = X @ np.asarray(alpha, dtype=float)
    if G is not None and beta is not None:
        mean = mean + np.asarray(G, dtype=float) @ np.asarray(beta, dtype=float)
    u = np.zeros(n)
    if lambda_true > 0:
        u = np.sqrt(lambda_true / tau_true) * kinship_factor(K) @ rng.standard_normal(n)
    return mean + u + rng.standard_normal(n) / np.sqrt(tau_true)


@dataclass
class SimulatedSet:
    set_id: str
    scenario: Scenario
    genotypes: np.ndarray
    mafs: np.ndarray
    y: np.ndarray
    beta: np.ndarray

    @property
    def is_null(self) -> bool:
        return self.scenario == Scenario.null

    def snp_ids(self) -> List[str]:
        return [f"{self.set_id}_snp{j}" for j in range(self.genotypes.shape[1])]


@dataclass
class Panel:
    """
    Labelled panel of SNP sets sharing one covariate, every set has its own phenotype.
    """

    config: SimConfig
    x: np.ndarray
    sets: List[SimulatedSet] = field(default_factory=list)

    @property
    def sample_ids(self) -> List[str]:
        return [f"ind{i}" for i in range(self.x.size)]

    def covariates(self) -> np.ndarray:
        return np.column_stack([np.ones(self.x.size), self.x])

    def truth(self) -> pd.DataFrame:
        """Columns `set_id`, `scenario`, `is_null`, `n_causal`."""
        return pd.DataFrame(
            [(s.set_id, s.scenario.value, s.is_null, int(np.sum(s.beta != 0))) for s in self.sets],
            columns=["set_id", "scenario", "is_null", "n_causal"],
        )

    def dataset(self, index: int) -> Dataset:
        s = self.sets[index]
        return Dataset(
            y=s.y,
            X=self.covariates(),
            G=s.genotypes,
            sample_ids=self.sample_ids,
            snp_ids=s.snp_ids(),
        )


def assign_scenarios(config: SimConfig, rng: np.random.Generator) -> List[Scenario]:
    n_null = config.n_null
    alternatives = rng.choice(len(ALTERNATIVES), size=config.n_sets - n_null, p=config.scenario_mix)
    labels = [Scenario.null] * n_null + [ALTERNATIVES[i] for i in alternatives]
    return [labels[i] for i in rng.permutation(config.n_sets)]


def simulate_set(
    set_id: str, scenario: Scenario, x: np.ndarray, config: SimConfig, rng: np.random.Generator
) -> SimulatedSet:
    if scenario == Scenario.common_variant:
        for _ in range(100):
            genotypes, mafs = simulate_genotypes(config, rng, maf_range=(config.maf_range[0], CV_MAF_RANGE[1]))
            if np.any(mafs >= COMMON_MAF):
                break
        y, beta = simulate_cv_alternative(genotypes, mafs, x, rng)
    else:
        genotypes, mafs = simulate_genotypes(config, rng)
        if scenario == Scenario.null:
            y, beta = simulate_null_phenotype(x, rng), np.zeros(genotypes.shape[1])
        else:
            y, beta = simulate_rare_alternative(genotypes, mafs, x, config, scenario, rng)
    return SimulatedSet(set_id=set_id, scenario=scenario, genotypes=genotypes, mafs=mafs, y=y, beta=beta)


def simulate_panel(config: SimConfig, executor: Optional[Executor] = None) -> Panel:
    """
    Simulate a labelled panel. The covariate and scenario labels come from the master stream, every set draws from
    its own stream spawned from `config.seed`, so the result does not depend on the executor.

    Usage:

    ```python
    from blmmstats.toolkit.sim import SimConfig, simulate_panel

    panel = simulate_panel(SimConfig.desk(n_sets=4, snps_per_set=5, n_individuals=30, seed=1))
    assert len(panel.sets) == 4 and panel.truth().is_null.sum() == 3
    ```
    """
    master, *streams = spawn_generators(config.seed, config.n_sets + 1)
    x = simulate_covariate(config.n_individuals, master)
    scenarios = assign_scenarios(config, master)
    width = len(str(config.n_sets))
    ids = [f"set{i:0{width}d}" for i in range(config.n_sets)]

    def one(i: int) -> SimulatedSet:
        return simulate_set(ids[i], scenarios[i], x, config, streams[i])

    mapper = executor.map if executor is not None else map
    sets = list(mapper(one, range(config.n_sets)))
    _logger.info(f"Simulated {config.n_sets} sets, {config.n_null} null, with {config.snps_per_set} SNPs each")
    return Panel(config=config, x=x, sets=sets)


@dataclass
class AccuracyData:
    """
    Related sample for the ABF accuracy sweep: phenotype with a kinship random effect, candidate SNPs tested one by
    one, and rows in a random order so that the first `n` rows form nested subsamples.
    """

    dataset: Dataset
    beta: np.ndarray

    def subsample(self, n: int) -> Dataset:
        if n > self.dataset.n:
            raise InputError(f"Subsample of {n} exceeds {self.dataset.n} samples")
        return self.dataset.subset(np.arange(n))


def simulate_accuracy_data(
    n: int,
    n_snps: int,
    seed: Optional[int] = None,
    n_background: int = 500,
    lambda_true: float = 0.5,
    tau_true: float = 1.0,
    effect_sd: float = 0.15,
) -> AccuracyData:
    """
    Sibling-pair sample with kinship estimated from background SNPs and candidate SNPs with $N(0, s^2)$ effects.
    """
    rng = np.random.default_rng(seed)
    background, _ = simulate_sibling_pairs(n, n_background, rng)
    candidates, _ = simulate_sibling_pairs(n, max(n_snps, 1), rng)
    candidates = candidates[:, :n_snps]
    K = estimate_kinship(background)
    X = np.ones((n, 1))
    beta = effect_sd * rng.standard_normal(n_snps)
    y = simulate_with_random_effect(X, [0.0], K, lambda_true, tau_true, rng, G=candidates, beta=beta)
    order = rng.permutation(n)
    dataset = Dataset(y=y, X=X, G=candidates, K=K, sample_ids=[f"ind{i}" for i in range(n)])
    return AccuracyData(dataset=dataset.subset(order), beta=beta)
