from typing import Sequence, Union

import numpy as np
import pandas as pd

from .fdr import bayes_fdr, bh_fdr, storey_fdr
from .finemap import FinemapReport
from .settest import EmResult, bf_three_way, bf_two_way


def scan_decisions(scan: pd.DataFrame, alpha: float = 0.05, pi0: Union[float, str] = 1.0) -> pd.DataFrame:
    """
    Adds BH decisions on the score p-values and Bayesian FDR decisions on `log10_abf_k0`. Flagged SNPs are never
    rejected. The null proportion used, given or estimated, is kept in `attrs["pi0"]`.
    """
    scan = scan.copy()
    ok = scan["score_pvalue"].notna().to_numpy() & scan["log10_abf_k0"].notna().to_numpy()
    scan["bh_qvalue"], scan["bh_rejected"] = np.nan, False
    scan["bayes_qvalue"], scan["bayes_rejected"] = np.nan, False
    if not ok.any():
        return scan
    bh = bh_fdr(scan.loc[ok, "score_pvalue"].to_numpy(), alpha)
    bayes = bayes_fdr(scan.loc[ok, "log10_abf_k0"].to_numpy(), pi0=pi0, alpha=alpha)
    scan.loc[ok, "bh_qvalue"] = bh.qvalues
    scan.loc[ok, "bh_rejected"] = bh.decisions
    scan.loc[ok, "bayes_qvalue"] = bayes.qvalues
    scan.loc[ok, "bayes_rejected"] = bayes.decisions
    scan.attrs["pi0"] = bayes.pi0
    return scan


def with_combined(
    sets: pd.DataFrame, pis: Sequence[float], two_way: bool = False, pi_two_way: float = 0.5
) -> pd.DataFrame:
    """
    Recomputes `log10_bf_combined` of a set table with new component weights. The two-way mixture uses burden and
    SKAT only.
    """
    sets = sets.copy()
    if two_way:
        sets["log10_bf_combined"] = [
            bf_two_way(b, s, pi_two_way) for b, s in zip(sets["log10_bf_burden"], sets["log10_bf_skat"])
        ]
        pis = (pi_two_way, 1 - pi_two_way, 0.0)
    else:
        sets["log10_bf_combined"] = [
            bf_three_way(b, s, c, pis)
            for b, s, c in zip(sets["log10_bf_burden"], sets["log10_bf_skat"], sets["log10_bf_cv"])
        ]
    sets["pi_burden"], sets["pi_skat"], sets["pi_cv"] = pis
    return sets


def set_decisions(sets: pd.DataFrame, p0: float, alpha: float = 0.05) -> pd.DataFrame:
    """Posterior null probability, Bayesian q-value and decision of every set at prior null probability `p0`."""
    sets = sets.copy()
    res = bayes_fdr(sets["log10_bf_combined"].to_numpy(), pi0=p0, alpha=alpha)
    sets["posterior_null"] = res.posterior_null
    sets["qvalue"] = res.qvalues
    sets["rejected"] = res.decisions
    return sets


def em_table(em: EmResult, components: Sequence[str]) -> pd.DataFrame:
    """One row per estimated quantity: `p0` then the component weights."""
    rows = [("p0", em.p0)] + [(f"pi_{c}", float(p)) for c, p in zip(components, em.pis)]
    frame = pd.DataFrame(rows, columns=["parameter", "value"])
    frame["iterations"] = em.iterations
    frame["converged"] = em.converged
    frame["flat"] = em.flat
    return frame


def pip_table(report: FinemapReport) -> pd.DataFrame:
    """PIPs in input SNP order with a `rank` column, 1 being the largest PIP."""
    table = report.pip.rename_axis("snp_id").reset_index()
    table["rank"] = table["pip"].rank(ascending=False, method="first").astype(int)
    for chain in report.chains:
        table[f"pip_chain{chain.chain}"] = chain.pip
    return table


def size_table(report: FinemapReport) -> pd.DataFrame:
    return report.size_distribution.reset_index()


def realized_error_rates(decisions: Sequence[bool], is_null: Sequence[bool]) -> pd.Series:
    """
    Realized false discovery proportion and power of a decision vector against truth labels.
    """
    decisions = np.asarray(decisions, dtype=bool)
    is_null = np.asarray(is_null, dtype=bool)
    if decisions.shape != is_null.shape:
        raise ValueError(f"Got {decisions.size} decisions for {is_null.size} labels")
    rejected = int(decisions.sum())
    false = int(np.sum(decisions & is_null))
    alternatives = int(np.sum(~is_null))
    return pd.Series(
        {
            "rejected": rejected,
            "false_discoveries": false,
            "fdr": false / rejected if rejected else 0.0,
            "power": (rejected - false) / alternatives if alternatives else np.nan,
        }
    )


def pvalue_baselines(pvalues: Sequence[float], alpha: float = 0.05, lambda_tuning: float = 0.5) -> dict:
    """BH and Storey decisions on the same p-values."""
    return {
        "bh": bh_fdr(pvalues, alpha).decisions,
        "storey": storey_fdr(pvalues, alpha, lambda_tuning).decisions,
    }
