import logging
from concurrent.futures import Executor
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from ..prometheus import Counter as PrometheusCounter
from ..prometheus import get_prometheus_metric
from .abf import BayesFactors
from .errors import BlmmError
from .lmm import LinearMixedModel, VarianceFit
from .priors import DEFAULT_PHI_GRID, EffectPrior

ZERO_VARIANCE = "zero_variance"

snp_failures_metric = get_prometheus_metric("snp_failures_total", PrometheusCounter, ["reason"])


class SnpScan:
    """
    Single-SNP association scan of one phenotype.

    One null fit is shared by all SNPs. For each SNP we report the $\\phi$-averaged ABF at both anchors, the Wald
    statistic at $\\kappa=1$ and the fixed-effect score statistic at $\\kappa=0$ with their $\\chi^2_1$ p-values.
    SNPs that cannot be evaluated get a row with `flag` set and `nan` statistics.

    Arguments:
        model: linear mixed model with the SNPs in `G`
        null_fit: null fit of `model`, computed when not given
        phi_grid: effect scales
        prior: single-SNP prior, $W = \\check\\tau^{-1}\\phi^2$ by default, `scaled_v` gives the implicit p-value
            prior
        kappa1: also fit every SNP at $\\kappa=1$ for the second ABF and the Wald statistic

    Usage:

    ```python
    from blmmstats.toolkit import LinearMixedModel
    from blmmstats.toolkit.scan import SnpScan
    from blmmstats.toolkit.testing import TestData

    scan = SnpScan(LinearMixedModel(TestData.related_dataset(n=60, p=3, seed=4)))
    table = scan.run()
    assert table.shape[0] == 3 and sorted(table["rank"]) == [1, 2, 3]
    ```
    """

    def __init__(
        self,
        model: LinearMixedModel,
        null_fit: Optional[VarianceFit] = None,
        phi_grid: Sequence[float] = DEFAULT_PHI_GRID,
        prior: Optional[EffectPrior] = None,
        kappa1: bool = True,
    ):
        self._logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
        self.model = model
        self.null_fit = null_fit if null_fit is not None else model.optimize_lambda(kappa=0)
        self.phi_grid = tuple(phi_grid)
        self.prior = prior if prior is not None else EffectPrior.spike_slab([1])
        if self.prior.p != 1:
            raise ValueError(f"Scan needs a single-SNP prior but got one over {self.prior.p} effects")
        self.kappa1 = kappa1

    @classmethod
    def columns(cls) -> List[str]:
        """
        Columns of the scan table:

        1. `snp_id` - SNP identifier
        1. `beta_check` - GLS effect at the null anchor
        1. `se` - its standard error
        1. `log10_abf_k0`, `log10_abf_k1` - ABF at the null and full anchor
        1. `wald`, `wald_pvalue` - Wald statistic at $\\kappa=1$
        1. `score`, `score_pvalue` - fixed-effect score statistic at $\\kappa=0$
        1. `rank` - rank by `log10_abf_k0`, 1 is the strongest
        1. `flag` - empty or the reason the SNP was not evaluated
        """
        return [
            "snp_id",
            "beta_check",
            "se",
            "log10_abf_k0",
            "log10_abf_k1",
            "wald",
            "wald_pvalue",
            "score",
            "score_pvalue",
            "flag",
        ]

    def _abf(self, effect) -> float:
        return BayesFactors.abf_phi_grid(effect, self.prior, self.phi_grid)

    def evaluate(self, j: int) -> list:
        snp_id = self.model.dataset.snp_id(j)
        if np.ptp(self.model.dataset.G[:, j]) == 0:
            snp_failures_metric.labels(ZERO_VARIANCE).inc()
            self._logger.warning(f"SNP [{snp_id}] has zero variance")
            return [snp_id, np.nan, np.nan, 0.0, 0.0, np.nan, np.nan, np.nan, np.nan, ZERO_VARIANCE]
        try:
            fit = self.null_fit
            effect0 = self.model.gls_effect(fit.lambda_check, fit.tau_check, columns=[j])
            score = BayesFactors.score_stat_fixed(self.model, fit, [j])
            abf1, wald = np.nan, np.nan
            if self.kappa1:
                fit1 = self.model.optimize_lambda(kappa=1, columns=[j])
                effect1 = self.model.gls_effect(fit1.lambda_check, fit1.tau_check, columns=[j])
                abf1 = BayesFactors.abf_phi_grid(effect1, self.prior, self.phi_grid, kappa=1)
                wald = BayesFactors.wald_stat(effect1)
        except BlmmError as e:
            snp_failures_metric.labels(e.code).inc()
            self._logger.warning(f"SNP [{snp_id}] not evaluated because of {e}")
            return [snp_id, np.nan, np.nan, np.nan, np.nan, np.nan, np.nan, np.nan, np.nan, e.code]
        return [
            snp_id,
            float(effect0.beta_check[0]),
            float(np.sqrt(effect0.v_check[0, 0])),
            self._abf(effect0),
            abf1,
            wald,
            BayesFactors.wald_pvalue(wald, effect0),
            score,
            BayesFactors.score_pvalue(score, effect0),
            "",
        ]

    def run(self, columns: Optional[Sequence[int]] = None, executor: Optional[Executor] = None) -> pd.DataFrame:
        """
        Scan the given columns of `G` (all by default), rows keep the input order.
        """
        columns = range(self.model.dataset.p) if columns is None else columns
        mapper = executor.map if executor is not None else map
        table = pd.DataFrame(list(mapper(self.evaluate, columns)), columns=self.columns())
        table["rank"] = table["log10_abf_k0"].rank(ascending=False, method="first", na_option="bottom").astype(int)
        return table
