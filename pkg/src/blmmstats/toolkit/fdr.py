import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy.special import expit
from statsmodels.stats.multitest import multipletests

from .settest import estimate_null_proportion
from .utils import LN10

_logger = logging.getLogger(__name__)


class FdrMethod(str, Enum):
    bayes_ebf = "BayesEBF"
    bh = "BH"
    storey = "Storey"


@dataclass
class DiscoverySet:
    """
    Outcome of a false discovery rate procedure over `m` units.

    Arguments:
        decisions: `True` for rejected (discovered) units, input order
        threshold: largest rejected posterior null probability or p-value, `nan` without rejections
        target_alpha: nominal level
        method: procedure used
        posterior_null: per-unit posterior null probabilities, Bayesian procedure only
        qvalues: Bayesian q-values or BH adjusted p-values, input order
        pi0: null proportion used
    """

    decisions: np.ndarray
    threshold: float
    target_alpha: float
    method: FdrMethod
    posterior_null: Optional[np.ndarray] = None
    qvalues: Optional[np.ndarray] = None
    pi0: float = 1.0

    @property
    def n_rejected(self) -> int:
        return int(self.decisions.sum())

    def to_frame(self, ids: Optional[Sequence[str]] = None) -> pd.DataFrame:
        """Per-unit table with columns `id`, `posterior_null`, `qvalue`, `rejected`."""
        m = self.decisions.size
        return pd.DataFrame(
            {
                "id": list(ids) if ids is not None else list(range(m)),
                "posterior_null": self.posterior_null if self.posterior_null is not None else np.full(m, np.nan),
                "qvalue": self.qvalues if self.qvalues is not None else np.full(m, np.nan),
                "rejected": self.decisions,
            }
        )


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha < 1:
        raise ValueError(f"We expect alpha in (0, 1) but got {alpha}")


def _check_pvalues(pvalues: Sequence[float]) -> np.ndarray:
    p = np.asarray(pvalues, dtype=float)
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ValueError("We expect p-values in [0, 1]")
    return p


def posterior_null(log10_bfs: Sequence[float], pi0: float) -> np.ndarray:
    """
    $P_{0,i} = \\pi_0 / (\\pi_0 + (1 - \\pi_0)\\mathrm{BF}_i)$, evaluated as a logistic function of
    $\\log\\pi_0 - \\log(1 - \\pi_0) - \\log\\mathrm{BF}_i$.
    """
    bfs = np.asarray(log10_bfs, dtype=float)
    if pi0 >= 1.0:
        return np.ones_like(bfs)
    return expit(np.log(pi0) - np.log1p(-pi0) - bfs * LN10)


def bayes_fdr(log10_bfs: Sequence[float], pi0: Union[float, str] = 1.0, alpha: float = 0.05) -> DiscoverySet:
    """
    Bayesian FDR control from Bayes factors.

    Units are sorted by their posterior null probability and the largest prefix whose running mean stays at or
    below `alpha` is rejected. The running means are the Bayesian q-values.

    With `pi0=1` every posterior null probability is one and nothing is rejected, which is the most conservative
    reading. `pi0="estimate"` takes $p_0$ from the EM estimate over the given Bayes factors.

    Arguments:
        log10_bfs: $\\log_{10}$ Bayes factors
        pi0: prior null probability in $(0, 1]$ or `"estimate"`
        alpha: target FDR

    Returns:
        [`DiscoverySet`][blmmstats.toolkit.fdr.DiscoverySet]

    Usage:

    ```python
    from blmmstats.toolkit.fdr import bayes_fdr

    res = bayes_fdr([300.0, 0.0, -1.0], pi0=0.5, alpha=0.05)
    assert res.decisions.tolist() == [True, False, False]
    ```
    """
    _check_alpha(alpha)
    bfs = np.asarray(log10_bfs, dtype=float)
    if np.any(~np.isfinite(bfs)):
        raise ValueError("We expect finite log10 Bayes factors")
    if isinstance(pi0, str):
        if pi0 != "estimate":
            raise ValueError(f"We expect pi0 to be a number or 'estimate' but got `{pi0}`")
        pi0 = estimate_null_proportion(bfs).p0 if bfs.size >= 2 else 1.0
        _logger.info(f"Estimated null proportion {pi0:.4f} from {bfs.size} Bayes factors")
    if not 0 < pi0 <= 1:
        raise ValueError(f"We expect pi0 in (0, 1] but got {pi0}")

    p0 = posterior_null(bfs, pi0)
    m = bfs.size
    decisions = np.zeros(m, dtype=bool)
    qvalues = np.zeros(m)
    threshold = np.nan
    if m:
        order = np.argsort(p0, kind="stable")
        running = np.cumsum(p0[order]) / np.arange(1, m + 1)
        qvalues[order] = np.minimum.accumulate(running[::-1])[::-1]
        passing = np.nonzero(running <= alpha)[0]
        if passing.size:
            k = passing[-1] + 1
            decisions[order[:k]] = True
            threshold = float(p0[order[k - 1]])
    return DiscoverySet(
        decisions=decisions,
        threshold=threshold,
        target_alpha=alpha,
        method=FdrMethod.bayes_ebf,
        posterior_null=p0,
        qvalues=qvalues,
        pi0=float(pi0),
    )


def bh_fdr(pvalues: Sequence[float], alpha: float = 0.05) -> DiscoverySet:
    """
    Benjamini-Hochberg step-up procedure.
    """
    _check_alpha(alpha)
    p = _check_pvalues(pvalues)
    if p.size == 0:
        return DiscoverySet(np.zeros(0, dtype=bool), np.nan, alpha, FdrMethod.bh, qvalues=np.zeros(0))
    rejected, adjusted, _, _ = multipletests(p, alpha=alpha, method="fdr_bh")
    return DiscoverySet(
        decisions=np.asarray(rejected, dtype=bool),
        threshold=float(p[rejected].max()) if rejected.any() else np.nan,
        target_alpha=alpha,
        method=FdrMethod.bh,
        qvalues=adjusted,
    )


def storey_null_proportion(pvalues: Sequence[float], lambda_tuning: float = 0.5) -> float:
    """
    $\\hat\\pi_0 = \\#\\{p_i > \\lambda\\} / ((1 - \\lambda)m)$ clamped to $[1/m, 1]$.
    """
    p = _check_pvalues(pvalues)
    if not 0 <= lambda_tuning < 1:
        raise ValueError(f"We expect lambda_tuning in [0, 1) but got {lambda_tuning}")
    m = p.size
    if m == 0:
        return 1.0
    return float(np.clip(np.sum(p > lambda_tuning) / ((1 - lambda_tuning) * m), 1.0 / m, 1.0))


def storey_fdr(pvalues: Sequence[float], alpha: float = 0.05, lambda_tuning: float = 0.5) -> DiscoverySet:
    """
    Adaptive step-up procedure, Benjamini-Hochberg at level $\\alpha / \\hat\\pi_0$.
    """
    _check_alpha(alpha)
    p = _check_pvalues(pvalues)
    pi0 = storey_null_proportion(p, lambda_tuning)
    if p.size == 0:
        return DiscoverySet(np.zeros(0, dtype=bool), np.nan, alpha, FdrMethod.storey, qvalues=np.zeros(0), pi0=pi0)
    level = min(alpha / pi0, 1.0 - 1e-12)
    rejected, adjusted, _, _ = multipletests(p, alpha=level, method="fdr_bh")
    return DiscoverySet(
        decisions=np.asarray(rejected, dtype=bool),
        threshold=float(p[rejected].max()) if rejected.any() else np.nan,
        target_alpha=alpha,
        method=FdrMethod.storey,
        qvalues=np.minimum(adjusted * pi0, 1.0),
        pi0=pi0,
    )
