import logging
from collections import Counter
from concurrent.futures import Executor
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from ..prometheus import Counter as PrometheusCounter
from ..prometheus import get_prometheus_metric
from .abf import BayesFactors
from .errors import EmptyChainError, InputError
from .lmm import LinearMixedModel, NullProjection, VarianceFit
from .priors import DEFAULT_PHI_GRID, EffectPrior, P1Spec
from .utils import LN10, spawn_generators

ADD, REMOVE, SWAP = "add", "remove", "swap"
MOVE_PROBABILITIES = {ADD: 0.4, REMOVE: 0.4, SWAP: 0.2}
REVERSE_MOVE = {ADD: REMOVE, REMOVE: ADD, SWAP: SWAP}
DEFAULT_MAX_ENUMERATION = 20
PIP_BATCHES = 50
EMPTY_MODEL = "none"

mcmc_proposals_metric = get_prometheus_metric("mcmc_proposals_total", PrometheusCounter)
mcmc_acceptances_metric = get_prometheus_metric("mcmc_acceptances_total", PrometheusCounter)


@dataclass
class WhitenedData:
    """
    Region data transformed by $\\tilde\\Sigma^{-1/2}$ at the null anchor. The residual variance is fixed at
    $\\tilde\\tau$ for every model, so ABFs on it equal the $\\kappa=0$ ABFs of the original data.
    """

    y: np.ndarray
    X: np.ndarray
    G: np.ndarray
    tau: float
    lam: float
    snp_ids: List[str]

    @property
    def p(self) -> int:
        return self.G.shape[1]

    @cached_property
    def projection(self) -> NullProjection:
        return NullProjection(self.y, self.X, self.lam)

    def log10_abf(self, included: Sequence[int], phi_grid: Sequence[float] = DEFAULT_PHI_GRID) -> float:
        """
        $\\phi$-averaged ABF of the model including `included` under $W = \\tilde\\tau^{-1}\\phi^2 I$, zero for the
        empty model.
        """
        included = list(included)
        if not included:
            return 0.0
        effect = self.projection.effect(self.G[:, included], self.tau, allow_singular=True)
        return BayesFactors.abf_phi_grid(effect, EffectPrior.spike_slab((1,) * len(included)), phi_grid)

    def model_name(self, included: Sequence[int]) -> str:
        return "+".join(self.snp_ids[j] for j in included) if len(included) else EMPTY_MODEL


def whiten(model: LinearMixedModel, null_fit: VarianceFit) -> WhitenedData:
    if null_fit.kappa != 0:
        raise ValueError(f"We expect the null anchor but got kappa={null_fit.kappa}")
    y, X, G = model.whiten(null_fit.lambda_check)
    dataset = model.dataset
    return WhitenedData(
        y=y,
        X=X,
        G=G,
        tau=null_fit.tau_check,
        lam=null_fit.lambda_check,
        snp_ids=[dataset.snp_id(j) for j in range(dataset.p)],
    )


def log_prior_gamma(gamma: Sequence[int], p1_spec: P1Spec) -> float:
    """
    $\\log\\Pr(\\gamma) = k\\log p_1 + (p - k)\\log(1 - p_1)$ with $k = |\\gamma|$, averaged over the grid of
    $p_1$ values on the natural scale.

    Usage:

    ```python
    import numpy as np
    from blmmstats.toolkit.finemap import log_prior_gamma
    from blmmstats.toolkit.priors import P1Spec

    value = log_prior_gamma(np.zeros(508, dtype=int), P1Spec(point=1 / 508))
    assert np.isclose(value, 508 * np.log(507 / 508))
    ```
    """
    gamma = np.asarray(gamma)
    p, k = gamma.size, int(np.sum(gamma))
    return _log_prior_size(k, p, p1_spec)


def _log_prior_size(k: int, p: int, p1_spec: P1Spec) -> float:
    p1 = p1_spec.grid_values
    if np.any(p1 <= 0) or np.any(p1 >= 1):
        raise ValueError(f"We expect p1 in (0, 1) but got {p1}")
    terms = k * np.log(p1) + (p - k) * np.log1p(-p1)
    return float(logsumexp(terms) - np.log(terms.size))


@dataclass
class InclusionState:
    """
    Model visited by the sampler, `included` holds the sorted indices with $\\gamma_i = 1$.
    """

    included: Tuple[int, ...]
    p: int
    log_prior: float
    log10_abf: float

    @property
    def gamma(self) -> np.ndarray:
        out = np.zeros(self.p, dtype=int)
        out[list(self.included)] = 1
        return out

    @property
    def size(self) -> int:
        return len(self.included)

    @property
    def log_post_score(self) -> float:
        return self.log_prior + LN10 * self.log10_abf


class PosteriorScorer:
    """
    Unnormalized log posterior of inclusion vectors with an ABF cache keyed by the included indices.
    """

    def __init__(self, data: WhitenedData, p1_spec: P1Spec, phi_grid: Sequence[float] = DEFAULT_PHI_GRID):
        self.data = data
        self.p1_spec = p1_spec
        self.phi_grid = tuple(phi_grid)
        self._abf_cache: Dict[Tuple[int, ...], float] = {}
        self._prior_cache: Dict[int, float] = {}

    def state(self, included: Sequence[int]) -> InclusionState:
        key = tuple(sorted(int(j) for j in included))
        if key not in self._abf_cache:
            self._abf_cache[key] = self.data.log10_abf(key, self.phi_grid)
        k = len(key)
        if k not in self._prior_cache:
            self._prior_cache[k] = _log_prior_size(k, self.data.p, self.p1_spec)
        return InclusionState(
            included=key, p=self.data.p, log_prior=self._prior_cache[k], log10_abf=self._abf_cache[key]
        )

    @property
    def cache_size(self) -> int:
        return len(self._abf_cache)


def move_probabilities(k: int, p: int) -> Dict[str, float]:
    """
    Move kernel at $|\\gamma| = k$: add, remove and swap with base weights 0.4, 0.4, 0.2 renormalized over the
    moves available at `k`.
    """
    available = {}
    if k < p:
        available[ADD] = MOVE_PROBABILITIES[ADD]
    if k > 0:
        available[REMOVE] = MOVE_PROBABILITIES[REMOVE]
    if 0 < k < p:
        available[SWAP] = MOVE_PROBABILITIES[SWAP]
    total = sum(available.values())
    return {m: v / total for m, v in available.items()}


def proposal_log_prob(move: str, k: int, p: int) -> float:
    """Log probability of one specific proposal of kind `move` from a state of size `k`."""
    probs = move_probabilities(k, p)
    if move not in probs:
        return -np.inf
    n_targets = {ADD: p - k, REMOVE: k, SWAP: k * (p - k)}[move]
    return float(np.log(probs[move]) - np.log(n_targets))


def log_hastings_ratio(current: InclusionState, proposed: InclusionState, move: str) -> float:
    """
    $\\log\\{\\pi(\\gamma')q(\\gamma' \\to \\gamma)\\} - \\log\\{\\pi(\\gamma)q(\\gamma \\to \\gamma')\\}$.
    """
    forward = proposal_log_prob(move, current.size, current.p)
    backward = proposal_log_prob(REVERSE_MOVE[move], proposed.size, proposed.p)
    return proposed.log_post_score - current.log_post_score + backward - forward


def propose(included: Tuple[int, ...], p: int, rng: np.random.Generator) -> Tuple[str, Tuple[int, ...]]:
    probs = move_probabilities(len(included), p)
    moves = list(probs)
    move = moves[int(rng.choice(len(moves), p=[probs[m] for m in moves]))]
    inside = np.asarray(included, dtype=int)
    outside = np.setdiff1d(np.arange(p), inside)
    if move == ADD:
        return move, tuple(sorted((*included, int(rng.choice(outside)))))
    if move == REMOVE:
        drop = int(rng.choice(inside))
        return move, tuple(j for j in included if j != drop)
    drop, add = int(rng.choice(inside)), int(rng.choice(outside))
    return move, tuple(sorted((*(j for j in included if j != drop), add)))


@dataclass
class McmcConfig:
    """
    Arguments:
        n_burn: discarded steps per chain
        n_keep: recorded steps per chain
        n_chains: independent chains
        seed: master seed, chains use spawned streams
        top_models: rows of the model table
    """

    n_burn: int = 150_000
    n_keep: int = 300_000
    n_chains: int = 2
    seed: Optional[int] = None
    top_models: int = 20

    def __post_init__(self):
        if self.n_burn < 0:
            raise ValueError(f"We expect n_burn >= 0 but got {self.n_burn}")
        if self.n_keep < 1:
            raise EmptyChainError(f"We need at least one kept sample but got n_keep={self.n_keep}")
        if self.n_chains < 1:
            raise ValueError(f"We expect at least one chain but got {self.n_chains}")
        if self.top_models < 1:
            raise ValueError(f"We expect top_models >= 1 but got {self.top_models}")


@dataclass
class ChainSummary:
    chain: int
    pip: np.ndarray
    n_kept: int
    n_proposed: int
    n_accepted: int
    model_counts: Counter = field(repr=False)
    size_counts: np.ndarray = field(repr=False)
    cache_size: int = 0
    batch_pip: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)), repr=False)

    @property
    def acceptance_rate(self) -> float:
        return self.n_accepted / self.n_proposed if self.n_proposed else 0.0

    @property
    def all_rejected(self) -> bool:
        return self.n_accepted == 0

    @property
    def pip_se(self) -> np.ndarray:
        """
        Batch means standard error of the PIPs, it accounts for the autocorrelation of the chain. With fewer than
        two batches it falls back to the binomial standard error of independent draws.
        """
        n_batches = self.batch_pip.shape[0]
        if n_batches < 2:
            return np.sqrt(self.pip * (1 - self.pip) / self.n_kept)
        return self.batch_pip.std(axis=0, ddof=1) / np.sqrt(n_batches)


def run_chain(
    data: WhitenedData,
    p1_spec: P1Spec,
    phi_grid: Sequence[float],
    config: McmcConfig,
    rng: np.random.Generator,
    chain: int = 0,
) -> ChainSummary:
    """
    One Metropolis-Hastings chain started from the empty model.
    """
    logger = logging.getLogger(f"{__name__}.run_chain")
    scorer = PosteriorScorer(data, p1_spec, phi_grid)
    p = data.p
    current = scorer.state(())
    inclusion = np.zeros(p)
    models: Counter = Counter()
    sizes = np.zeros(p + 1, dtype=int)
    n_batches = min(PIP_BATCHES, config.n_keep)
    batches = np.zeros((n_batches, p))
    batch_sizes = np.zeros(n_batches)
    accepted = 0
    total = config.n_burn + config.n_keep
    for step in range(total):
        move, included = propose(current.included, p, rng)
        proposed = scorer.state(included)
        if np.log(rng.random()) < log_hastings_ratio(current, proposed, move):
            current = proposed
            accepted += 1
        if step >= config.n_burn:
            inclusion[list(current.included)] += 1
            batch = (step - config.n_burn) * n_batches // config.n_keep
            batches[batch, list(current.included)] += 1
            batch_sizes[batch] += 1
            models[current.included] += 1
            sizes[current.size] += 1
    mcmc_proposals_metric.inc(total)
    mcmc_acceptances_metric.inc(accepted)
    if accepted == 0:
        logger.warning(f"Chain [{chain}] rejected all {total} proposals")
    return ChainSummary(
        chain=chain,
        pip=inclusion / config.n_keep,
        n_kept=config.n_keep,
        n_proposed=total,
        n_accepted=accepted,
        model_counts=models,
        size_counts=sizes,
        cache_size=scorer.cache_size,
        batch_pip=batches / batch_sizes[:, None],
    )


@dataclass
class FinemapReport:
    """
    Pooled posterior summaries of all chains.

    Arguments:
        pip: posterior inclusion probabilities indexed by SNP id
        model_table: top models with columns `model`, `size`, `posterior`, `log10_abf`, `log_prior`
        size_distribution: posterior mass by number of included SNPs
        chains: per-chain summaries
    """

    pip: pd.Series
    model_table: pd.DataFrame
    size_distribution: pd.Series
    chains: List[ChainSummary]
    model_frequencies: Dict[Tuple[int, ...], float] = field(default_factory=dict, repr=False)

    def credible_set(self, level: float = 0.95) -> List[str]:
        """
        Smallest set of SNPs, by decreasing PIP, whose cumulative PIP reaches `level`. Empty when the PIPs never
        reach it.
        """
        if not 0 < level <= 1:
            raise ValueError(f"We expect level in (0, 1] but got {level}")
        ordered = self.pip.sort_values(ascending=False, kind="stable")
        reached = np.nonzero(ordered.cumsum().to_numpy() >= level - 1e-12)[0]
        if reached.size == 0:
            return []
        return list(ordered.index[: reached[0] + 1])

    def chain_table(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(c.chain, c.n_kept, c.acceptance_rate, c.all_rejected, c.cache_size) for c in self.chains],
            columns=["chain", "n_kept", "acceptance_rate", "all_rejected", "distinct_models"],
        )


def mcmc_finemap(
    data: WhitenedData,
    p1_spec: P1Spec,
    phi_grid: Sequence[float] = DEFAULT_PHI_GRID,
    config: Optional[McmcConfig] = None,
    executor: Optional[Executor] = None,
) -> FinemapReport:
    """
    Bayesian variable selection over the SNPs of a region.

    Every chain proposes adding, removing or swapping one SNP and accepts with the Metropolis-Hastings ratio of

    $$
    \\Pr(\\gamma)\\,\\mathrm{ABF}(\\tilde\\tau^{-1}\\phi^2\\mathrm{diag}(\\gamma)),
    $$

    the ABF averaged over `phi_grid`. Chains draw from streams spawned from `config.seed` and are gathered in
    order, so the report does not depend on the executor.

    Arguments:
        data: whitened region, see [`whiten`][blmmstats.toolkit.finemap.whiten]
        p1_spec: prior inclusion probability
        phi_grid: effect scales
        config: run lengths, chain count and seed
        executor: runs chains concurrently when given

    Returns:
        [`FinemapReport`][blmmstats.toolkit.finemap.FinemapReport]
    """
    config = config or McmcConfig()
    if data.p < 1:
        raise InputError("We need at least one SNP in the region")
    rngs = spawn_generators(config.seed, config.n_chains)

    def one(i: int) -> ChainSummary:
        return run_chain(data, p1_spec, phi_grid, config, rngs[i], chain=i)

    mapper = executor.map if executor is not None else map
    chains = list(mapper(one, range(config.n_chains)))
    return _pool(data, p1_spec, phi_grid, config, chains)


def _pool(
    data: WhitenedData, p1_spec: P1Spec, phi_grid: Sequence[float], config: McmcConfig, chains: List[ChainSummary]
) -> FinemapReport:
    n_total = sum(c.n_kept for c in chains)
    pip = sum(c.pip * c.n_kept for c in chains) / n_total
    counts: Counter = Counter()
    for c in chains:
        counts.update(c.model_counts)
    sizes = sum(c.size_counts for c in chains) / n_total

    scorer = PosteriorScorer(data, p1_spec, phi_grid)
    rows = []
    for included, count in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[: config.top_models]:
        state = scorer.state(included)
        rows.append((data.model_name(included), state.size, count / n_total, state.log10_abf, state.log_prior))
    return FinemapReport(
        pip=pd.Series(pip, index=data.snp_ids, name="pip"),
        model_table=pd.DataFrame(rows, columns=["model", "size", "posterior", "log10_abf", "log_prior"]),
        size_distribution=pd.Series(sizes, index=pd.RangeIndex(data.p + 1, name="size"), name="posterior"),
        chains=chains,
        model_frequencies={k: v / n_total for k, v in counts.items()},
    )


def chain_agreement(chains: Sequence[ChainSummary]) -> float:
    """
    Largest standardized difference of per-chain PIPs over SNPs and chain pairs, the standard error of a difference
    combines the batch means standard errors of both chains. Zero for a single chain.
    """
    worst = 0.0
    for a, b in combinations(chains, 2):
        se = np.sqrt(a.pip_se**2 + b.pip_se**2)
        diff = np.abs(a.pip - b.pip)
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff > 0, np.inf, 0.0))
        worst = max(worst, float(z.max()) if z.size else 0.0)
    return worst


def enumerate_posterior(
    data: WhitenedData,
    p1_spec: P1Spec,
    phi_grid: Sequence[float] = DEFAULT_PHI_GRID,
    max_p: int = DEFAULT_MAX_ENUMERATION,
) -> pd.DataFrame:
    """
    Exact posterior over all $2^p$ inclusion vectors, rows ordered by model size then indices.

    Returns:
        dataframe with columns `model`, `included`, `size`, `log10_abf`, `log_prior`, `posterior`
    """
    p = data.p
    if p > max_p:
        raise InputError(f"Enumeration of {p} SNPs exceeds the limit of {max_p}")
    scorer = PosteriorScorer(data, p1_spec, phi_grid)
    states = [scorer.state(included) for k in range(p + 1) for included in combinations(range(p), k)]
    scores = np.array([s.log_post_score for s in states])
    posterior = np.exp(scores - logsumexp(scores))
    return pd.DataFrame(
        {
            "model": [data.model_name(s.included) for s in states],
            "included": [s.included for s in states],
            "size": [s.size for s in states],
            "log10_abf": [s.log10_abf for s in states],
            "log_prior": [s.log_prior for s in states],
            "posterior": posterior,
        }
    )


def enumeration_pip(table: pd.DataFrame, p: int) -> np.ndarray:
    pip = np.zeros(p)
    for included, posterior in zip(table["included"], table["posterior"]):
        pip[list(included)] += posterior
    return pip


def total_variation(report: FinemapReport, table: pd.DataFrame) -> float:
    """Total variation distance between sampled model frequencies and the exact posterior."""
    exact = dict(zip(table["included"], table["posterior"]))
    keys = set(exact) | set(report.model_frequencies)
    return 0.5 * sum(abs(exact.get(k, 0.0) - report.model_frequencies.get(k, 0.0)) for k in keys)
