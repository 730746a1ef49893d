from .abf import AbfResult, BayesFactors
from .dao import Dao, TsvDao
from .errors import BlmmError, InputError, NumericError, OracleError
from .fdr import DiscoverySet, FdrMethod, bayes_fdr, bh_fdr, storey_fdr
from .finemap import FinemapReport, McmcConfig, enumerate_posterior, mcmc_finemap, whiten
from .lmm import Dataset, LinearMixedModel, VarianceFit
from .parser import Parser
from .priors import DEFAULT_PHI_GRID, EffectPrior, P1Spec
from .scan import SnpScan
from .settest import SetBfRecord, SetTest, em_estimate_weights

__all__ = [
    "AbfResult",
    "BayesFactors",
    "BlmmError",
    "Dao",
    "Dataset",
    "DEFAULT_PHI_GRID",
    "DiscoverySet",
    "EffectPrior",
    "FdrMethod",
    "FinemapReport",
    "InputError",
    "LinearMixedModel",
    "McmcConfig",
    "NumericError",
    "OracleError",
    "P1Spec",
    "Parser",
    "SetBfRecord",
    "SetTest",
    "SnpScan",
    "TsvDao",
    "VarianceFit",
    "bayes_fdr",
    "bh_fdr",
    "em_estimate_weights",
    "enumerate_posterior",
    "mcmc_finemap",
    "storey_fdr",
    "whiten",
]
