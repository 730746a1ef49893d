import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from ..prometheus import Counter as PrometheusCounter
from ..prometheus import get_prometheus_metric
from .abf import BayesFactors
from .errors import BlmmError, InputError, NonFiniteEntryError
from .lmm import LinearMixedModel, VarianceFit
from .priors import DEFAULT_PHI_GRID, EffectPrior, snp_weights
from .utils import LN10, empirical_maf, log10_mean, log10_weighted_sum, validate_probabilities

DEFAULT_PIS = (1 / 3, 1 / 3, 1 / 3)
DEFAULT_PI_TWO_WAY = 0.5
EM_CLAMP = 1e-3
EM_TOLERANCE = 1e-8
EM_MAX_ITERATIONS = 1000
EM_MONOTONE_SLACK = 1e-10

set_evaluation_errors_metric = get_prometheus_metric("set_evaluation_errors_total", PrometheusCounter)
_logger = logging.getLogger(__name__)


@dataclass
class SetBfRecord:
    """
    Bayes factors of one SNP set, every component already averaged over the $\\phi$ grid.
    """

    set_id: str
    n_snps: int
    log10_bf_burden: float
    log10_bf_skat: float
    log10_bf_cv: float
    log10_bf_combined: float
    pis_used: Tuple[float, float, float]
    log10_bf_skato: float = np.nan

    def components(self) -> np.ndarray:
        return np.array([self.log10_bf_burden, self.log10_bf_skat, self.log10_bf_cv])

    @classmethod
    def columns(cls) -> List[str]:
        """
        Columns of the set table:

        1. `set_id` - SNP set identifier
        1. `n_snps` - number of SNPs in the set
        1. `log10_bf_burden` - burden model, rank one prior $(\\sqrt{w})(\\sqrt{w})'$
        1. `log10_bf_skat` - SKAT model, diagonal prior $\\mathrm{diag}(w)$
        1. `log10_bf_cv` - average of single common variant models
        1. `log10_bf_skato` - SKAT-O prior, `nan` unless requested
        1. `log10_bf_combined` - mixture of the three components under `pi_*`
        1. `pi_burden`, `pi_skat`, `pi_cv` - component weights used
        """
        return [
            "set_id",
            "n_snps",
            "log10_bf_burden",
            "log10_bf_skat",
            "log10_bf_cv",
            "log10_bf_skato",
            "log10_bf_combined",
            "pi_burden",
            "pi_skat",
            "pi_cv",
        ]

    def to_row(self) -> list:
        return [
            self.set_id,
            self.n_snps,
            self.log10_bf_burden,
            self.log10_bf_skat,
            self.log10_bf_cv,
            self.log10_bf_skato,
            self.log10_bf_combined,
            *self.pis_used,
        ]


@dataclass
class EmResult:
    """
    Estimated null probability `p0`, component weights `pis` and per-set membership posteriors
    (first column is the null) of the hierarchical mixture.
    """

    p0: float
    pis: np.ndarray
    posteriors: np.ndarray
    log_likelihood: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    flat: bool = False

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.log_likelihood) >= -EM_MONOTONE_SLACK))


def bf_two_way(log10_bf_burden: float, log10_bf_skat: float, pi: float = DEFAULT_PI_TWO_WAY) -> float:
    """
    $\\overline{\\mathrm{BF}}(\\pi) = \\pi\\,\\mathrm{BF}_{burden} + (1 - \\pi)\\,\\mathrm{BF}_{skat}$ on the
    $\\log_{10}$ scale.
    """
    if not 0 <= pi <= 1:
        raise ValueError(f"We expect pi in [0, 1] but got {pi}")
    return log10_weighted_sum([log10_bf_burden, log10_bf_skat], [pi, 1.0 - pi])


def bf_three_way(
    log10_bf_burden: float, log10_bf_skat: float, log10_bf_cv: float, pis: Sequence[float] = DEFAULT_PIS
) -> float:
    """
    $\\pi_b\\mathrm{BF}_{burden} + \\pi_s\\mathrm{BF}_{skat} + \\pi_c\\mathrm{BF}_{cv}$ on the $\\log_{10}$ scale.
    """
    pis = validate_probabilities(pis, "pis")
    if pis.size != 3:
        raise ValueError(f"We expect three component weights but got {pis.size}")
    return log10_weighted_sum([log10_bf_burden, log10_bf_skat, log10_bf_cv], pis)


def bf_cv(
    model: LinearMixedModel,
    null_fit: VarianceFit,
    columns: Sequence[int],
    phi_grid: Sequence[float] = DEFAULT_PHI_GRID,
) -> float:
    """
    Common variant Bayes factor of a set, the uniform average of single-SNP models

    $$
    \\mathrm{BF}_{cv} = \\frac{1}{p}\\sum_{i=1}^p \\mathrm{BF}(W_i), \\quad W_i = \\tilde\\tau^{-1}\\phi^2
    \\mathrm{diag}(e_i),
    $$

    each single-SNP Bayes factor averaged over `phi_grid` through the scalar formula. Zero-variance SNPs
    contribute a Bayes factor of one.
    """
    if len(columns) == 0:
        raise InputError("We need at least one SNP in the set")
    per_snp = np.array([_single_snp_log10(model, null_fit, j, phi_grid) for j in columns])
    return log10_mean(per_snp)


def _single_snp_log10(model: LinearMixedModel, null_fit: VarianceFit, j: int, phi_grid: Sequence[float]) -> float:
    effect = model.gls_effect(null_fit.lambda_check, null_fit.tau_check, columns=[j], allow_singular=True)
    if effect.rank == 0:
        return 0.0
    beta, v = float(effect.beta_check[0]), float(effect.v_check[0, 0])
    per_phi = [BayesFactors.abf_scalar(beta, v, phi**2 / null_fit.tau_check) for phi in phi_grid]
    return log10_mean(per_phi)


class SetTest:
    """
    Bayesian SNP set test of one phenotype against many SNP sets.

    One null fit ($\\kappa = 0$) is shared by every set. Each set gets burden, SKAT and common variant Bayes
    factors with set-normalized $\\mathrm{Beta}(1, 25)$ weights, combined with `pis`.

    Arguments:
        model: linear mixed model of the phenotype with all SNPs in `G`
        null_fit: null fit of `model`, computed when not given
        phi_grid: effect scales averaged in every component
        pis: weights of burden, SKAT and common variant components
        skato_rho: also compute the SKAT-O prior with this $\\rho$

    Usage:

    ```python
    from blmmstats.toolkit import LinearMixedModel, SetTest
    from blmmstats.toolkit.testing import TestData

    model = LinearMixedModel(TestData.related_dataset(n=80, p=6, seed=5))
    test = SetTest(model)
    record = test.evaluate("set1", [0, 1, 2])
    assert record.n_snps == 3
    ```
    """

    def __init__(
        self,
        model: LinearMixedModel,
        null_fit: Optional[VarianceFit] = None,
        phi_grid: Sequence[float] = DEFAULT_PHI_GRID,
        pis: Sequence[float] = DEFAULT_PIS,
        skato_rho: Optional[float] = None,
    ):
        self._logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
        self.model = model
        self.null_fit = null_fit if null_fit is not None else model.optimize_lambda(kappa=0)
        if self.null_fit.kappa != 0:
            raise ValueError(f"Set test needs the null anchor but got kappa={self.null_fit.kappa}")
        if len(phi_grid) == 0:
            raise ValueError("We expect a non-empty phi grid")
        self.phi_grid = tuple(phi_grid)
        self.pis = tuple(validate_probabilities(pis, "pis"))
        self.skato_rho = skato_rho

    def evaluate(self, set_id: str, columns: Sequence[int], mafs: Optional[Sequence[float]] = None) -> SetBfRecord:
        """
        Component and combined Bayes factors of one set.

        Arguments:
            set_id: set identifier
            columns: indices of the set SNPs in `G`
            mafs: minor allele frequencies, estimated from the genotypes when not given
        """
        columns = list(columns)
        if not columns:
            raise InputError("We need at least one SNP in the set", context=set_id)
        if mafs is None:
            mafs = empirical_maf(self.model.dataset.G[:, columns])
        weights = snp_weights(mafs, normalize=True)
        effect = self.model.gls_effect(
            self.null_fit.lambda_check, self.null_fit.tau_check, columns=columns, allow_singular=True
        )

        def averaged(prior: EffectPrior) -> float:
            return BayesFactors.abf_phi_grid(effect, prior, self.phi_grid)

        burden = averaged(EffectPrior.burden(weights))
        skat = averaged(EffectPrior.skat(weights))
        cv = bf_cv(self.model, self.null_fit, columns, self.phi_grid)
        skato = averaged(EffectPrior.skato(weights, rho=self.skato_rho)) if self.skato_rho is not None else np.nan
        return SetBfRecord(
            set_id=set_id,
            n_snps=len(columns),
            log10_bf_burden=burden,
            log10_bf_skat=skat,
            log10_bf_cv=cv,
            log10_bf_combined=bf_three_way(burden, skat, cv, self.pis),
            pis_used=self.pis,
            log10_bf_skato=skato,
        )

    def _safe_evaluate(self, item: Tuple[str, Sequence[int], Optional[np.ndarray]]) -> Optional[SetBfRecord]:
        set_id, columns, mafs = item
        try:
            return self.evaluate(set_id, columns, mafs)
        except BlmmError as e:
            set_evaluation_errors_metric.inc()
            self._logger.warning(f"Cannot evaluate set [{set_id}] because of {e}")
            return None

    def evaluate_sets(
        self,
        sets: Dict[str, Sequence[int]],
        executor: Optional[Executor] = None,
        mafs: Optional[Sequence[float]] = None,
    ) -> pd.DataFrame:
        """
        Evaluate many sets, output rows keep the order of `sets`. Failed sets are logged and skipped.
        `mafs` are MAFs of all columns of `G`, estimated per set from the genotypes when missing.

        Returns:
            dataframe with [`SetBfRecord.columns`][blmmstats.toolkit.settest.SetBfRecord.columns]
        """
        mafs = np.asarray(mafs, dtype=float) if mafs is not None else None
        items = [(s, list(c), mafs[list(c)] if mafs is not None else None) for s, c in sets.items()]
        mapper = executor.map if executor is not None else map
        records = [r for r in mapper(self._safe_evaluate, items) if r is not None]
        return records_frame(records)


def set_bayes_factors(
    model: LinearMixedModel,
    null_fit: VarianceFit,
    set_id: str,
    columns: Sequence[int],
    mafs: Optional[Sequence[float]] = None,
    phi_grid: Sequence[float] = DEFAULT_PHI_GRID,
    skato_rho: Optional[float] = None,
) -> SetBfRecord:
    """Component Bayes factors of a single set with uniform component weights."""
    return SetTest(model, null_fit, phi_grid, skato_rho=skato_rho).evaluate(set_id, columns, mafs)


def records_frame(records: Sequence[SetBfRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.to_row() for r in records], columns=SetBfRecord.columns())


def em_estimate_weights(
    per_set_component_log_bfs: np.ndarray,
    p0_init: float = 0.5,
    pis_init: Optional[Sequence[float]] = None,
    fix_p0: bool = False,
    fix_pis: bool = False,
    tolerance: float = EM_TOLERANCE,
    max_iterations: int = EM_MAX_ITERATIONS,
) -> EmResult:
    """
    EM estimate of the null probability $p_0$ and component weights $\\pi$ pooled over sets, maximizing

    $$
    \\sum_s \\log\\left[p_0 + (1 - p_0)\\sum_k \\pi_k \\mathrm{BF}_{s,k}\\right].
    $$

    Latent indicators assign every set either to the null or to one of the `K` alternative components.
    Estimated quantities are clamped to $[10^{-3}, 1 - 10^{-3}]$ at the end, fixed ones are returned as given.

    Arguments:
        per_set_component_log_bfs: `S x K` table of $\\log_{10}$ Bayes factors
        p0_init: starting null probability
        pis_init: starting component weights, uniform by default
        fix_p0: keep `p0_init`
        fix_pis: keep `pis_init`
        tolerance: stop when the log-likelihood gain falls below it
        max_iterations: iteration cap

    Returns:
        [`EmResult`][blmmstats.toolkit.settest.EmResult], `flat` is set when the data cannot tell the
        components apart (fewer than two sets, or identical component Bayes factors in every set)

    Usage:

    ```python
    import numpy as np
    from blmmstats.toolkit.settest import em_estimate_weights

    res = em_estimate_weights(np.array([[6.0, 0.0], [6.0, 0.0]]), p0_init=0.0, fix_p0=True)
    assert res.pis[0] > 0.99 and res.monotone
    ```
    """
    table = np.atleast_2d(np.asarray(per_set_component_log_bfs, dtype=float))
    if table.shape[1] < 2:
        raise ValueError(f"We expect at least two components but got {table.shape[1]}")
    return _em(table, p0_init, pis_init, fix_p0, fix_pis, tolerance, max_iterations)


def estimate_null_proportion(log10_bfs: Sequence[float], p0_init: float = 0.5) -> EmResult:
    """Single component variant of the EM, it estimates $p_0$ only."""
    table = np.asarray(log10_bfs, dtype=float).reshape(-1, 1)
    return _em(table, p0_init, [1.0], False, True, EM_TOLERANCE, EM_MAX_ITERATIONS)


def _em(
    table: np.ndarray,
    p0_init: float,
    pis_init: Optional[Sequence[float]],
    fix_p0: bool,
    fix_pis: bool,
    tolerance: float,
    max_iterations: int,
) -> EmResult:
    S, K = table.shape
    if not np.all(np.isfinite(table)):
        raise NonFiniteEntryError("Bayes factor table contains non-finite entries")
    if not 0 <= p0_init <= 1:
        raise ValueError(f"We expect p0 in [0, 1] but got {p0_init}")
    pis = np.full(K, 1.0 / K) if pis_init is None else validate_probabilities(pis_init, "pis_init", tol=1e-9)
    if pis.size != K:
        raise ValueError(f"Got {pis.size} initial weights for {K} components")
    p0 = float(p0_init)

    log_bf = table * LN10
    flat_pis = S < 2 or bool(np.all(np.ptp(log_bf, axis=1) < 1e-12))
    if S < 2:
        _logger.warning(f"EM needs at least two sets but got {S}, returning the initial weights")

    def e_step(p0, pis):
        with np.errstate(divide="ignore"):
            comp = np.column_stack([np.full(S, np.log(p0)), np.log1p(-p0) + np.log(pis) + log_bf])
        total = logsumexp(comp, axis=1)
        return np.exp(comp - total[:, None]), float(total.sum())

    posteriors, loglik = e_step(p0, pis)
    trace = [loglik]
    converged = False
    iterations = 0
    if S >= 2:
        for iterations in range(1, max_iterations + 1):
            if not fix_p0:
                p0 = float(posteriors[:, 0].mean())
            if not (fix_pis or flat_pis):
                mass = posteriors[:, 1:].sum(axis=0)
                if mass.sum() > 0:
                    pis = mass / mass.sum()
            posteriors, loglik = e_step(p0, pis)
            trace.append(loglik)
            if trace[-1] < trace[-2] - EM_MONOTONE_SLACK:
                _logger.warning(f"EM log-likelihood decreased from {trace[-2]} to {trace[-1]}")
            if trace[-1] - trace[-2] < tolerance:
                converged = True
                break

    if not fix_p0:
        p0 = float(np.clip(p0, EM_CLAMP, 1 - EM_CLAMP))
    if not (fix_pis or flat_pis):
        pis = np.clip(pis, EM_CLAMP, 1 - EM_CLAMP)
        pis = pis / pis.sum()
    # posteriors follow the returned weights
    posteriors, _ = e_step(p0, pis)
    return EmResult(
        p0=p0,
        pis=np.asarray(pis, dtype=float),
        posteriors=posteriors,
        log_likelihood=trace,
        iterations=iterations,
        converged=converged,
        flat=flat_pis,
    )
