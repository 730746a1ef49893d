import logging
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import quad
from scipy.special import gammaln

from ..prometheus import Counter as PrometheusCounter
from ..prometheus import get_prometheus_metric
from .abf import BayesFactors
from .errors import BlmmError, InputError, InvalidPriorError, OracleError
from .lmm import LinearMixedModel
from .priors import EffectPrior
from .sim import AccuracyData, simulate_accuracy_data
from .utils import LN10

DEFAULT_LOG10_LAMBDA_BOUNDS = (-8.0, 8.0)
DEFAULT_QUAD_TOL = 1e-6
DEFAULT_SWEEP_PHI = 0.4
DEFAULT_SAMPLE_SIZES = (50, 100, 150, 336)
ACCURACY_BAND = 0.15
SCAN_POINTS = 161
QUAD_LIMIT = 200

oracle_evaluations_metric = get_prometheus_metric("oracle_evaluations_total", PrometheusCounter)
_logger = logging.getLogger(__name__)


@dataclass
class OracleResult:
    log10_bf: float
    abs_error: float
    n_evaluations: int
    quad_tol: float


@dataclass
class TauIntegralCheck:
    lam: float
    closed_form: float
    numeric: float

    @property
    def relative_error(self) -> float:
        return float(abs(np.expm1(self.numeric - self.closed_form)))


class MarginalLikelihood:
    """
    Log marginal likelihood of $\\lambda$ under $p(\\tau) \\propto 1/\\tau$, a flat prior on $\\alpha$ and
    $\\beta \\sim N(0, \\tau^{-1}S)$ with a fixed shape $S$:

    $$
    \\log m(\\lambda) = -\\frac{1}{2}\\log|\\Sigma| - \\frac{1}{2}\\log|X'\\Sigma^{-1}X| - \\frac{1}{2}\\log|I + M|
    + \\log\\Gamma(a) + a\\log(2/Q), \\quad a = \\frac{n - q}{2},
    $$

    with $M = B'AB$, $b = B's$, $S = BB'$, $Q = RSS_0 - b'(I + M)^{-1}b$, $A$ and $s$ the projected gram and score
    of the effect columns. $S = 0$ gives the null model. Constants shared by every model are dropped.
    """

    def __init__(self, model: LinearMixedModel, columns: Sequence[int], shape: np.ndarray):
        self.model = model
        self.columns = list(columns)
        self._root = BayesFactors._psd_root(np.atleast_2d(shape)) if len(self.columns) else np.zeros((0, 0))
        self.rank = self._root.shape[1]
        self.a = 0.5 * (model.n - model.dataset.q)

    def quadratic(self, lam: float) -> Tuple[float, float]:
        """$(\\log|I + M|, Q)$ at $\\lambda$."""
        projection = self.model.null_projection(lam)
        if self.rank == 0:
            return 0.0, projection.rss
        G_x = projection.project(self.model.whitened_effects(lam, self.columns))
        GB = G_x @ self._root
        M = GB.T @ GB
        b = GB.T @ projection.residual
        d, Q = np.linalg.eigh((M + M.T) / 2)
        d = np.clip(d, 0.0, None)
        return float(np.sum(np.log1p(d))), float(projection.rss - np.sum((Q.T @ b) ** 2 / (1.0 + d)))

    def tau_integral(self, q: float) -> float:
        """$\\log\\int_0^\\infty \\tau^{a-1}e^{-\\tau Q/2}d\\tau = \\log\\Gamma(a) + a\\log(2/Q)$."""
        return float(gammaln(self.a) + self.a * np.log(2.0 / q))

    def __call__(self, log10_lambda: float) -> float:
        lam = 10.0**log10_lambda
        projection = self.model.null_projection(lam)
        log_det_m, q = self.quadratic(lam)
        return (
            -0.5 * self.model.log_det_sigma(lam)
            - 0.5 * projection.log_det_gram
            - 0.5 * log_det_m
            + self.tau_integral(q)
        )


def _shape(prior: EffectPrior, p: int) -> np.ndarray:
    if not prior.has_phi or not prior.standardized:
        raise InvalidPriorError(f"Numerical Bayes factor needs a standardized prior scaled by 1/tau, got {prior}")
    if prior.p != p:
        raise InvalidPriorError(f"Prior describes {prior.p} effects but {p} columns were selected")
    return prior.phi**2 * prior.shape_matrix()


def _log_integral(
    marginal: MarginalLikelihood, bounds: Tuple[float, float], quad_tol: float, label: str
) -> Tuple[float, float, int]:
    grid = np.linspace(bounds[0], bounds[1], SCAN_POINTS)
    values = np.array([marginal(t) for t in grid])
    if not np.all(np.isfinite(values)):
        raise OracleError(
            f"Marginal likelihood of the {label} model is not finite on the lambda grid",
            diagnostics={"log10_lambda": grid.tolist(), "log_marginal": values.tolist()},
        )
    peak = values.max()
    peak_at = float(grid[int(np.argmax(values))])
    result = quad(
        lambda t: np.exp(marginal(t) - peak),
        bounds[0],
        bounds[1],
        epsrel=quad_tol,
        epsabs=0.0,
        limit=QUAD_LIMIT,
        points=[peak_at] if bounds[0] < peak_at < bounds[1] else None,
        full_output=True,
    )
    value, error, info = result[:3]
    if len(result) > 3:
        raise OracleError(
            f"Quadrature over log lambda of the {label} model did not converge: {result[3]}",
            diagnostics={"quad_tol": quad_tol, "peak_log10_lambda": peak_at, "abs_error": float(error)},
        )
    if not value > 0:
        raise OracleError(f"Quadrature of the {label} model returned {value}", diagnostics={"quad_tol": quad_tol})
    return float(np.log(value) + peak), float(error / value), int(info["neval"])


def bf_numeric(
    model: LinearMixedModel,
    columns: Sequence[int],
    prior: EffectPrior,
    log10_lambda_bounds: Tuple[float, float] = DEFAULT_LOG10_LAMBDA_BOUNDS,
    quad_tol: float = DEFAULT_QUAD_TOL,
) -> OracleResult:
    """
    Bayes factor of $\\beta \\sim N(0, W)$ against $\\beta = 0$ under $p(\\lambda, \\tau) \\propto 1/(\\lambda\\tau)$.

    $\\tau$ is integrated analytically, $\\lambda$ numerically over $\\log_{10}\\lambda$ within
    `log10_lambda_bounds` by adaptive Gauss-Kronrod quadrature. The $1/\\lambda$ prior is flat in
    $\\log\\lambda$, the truncation is shared by both models.

    Arguments:
        model: linear mixed model of the data
        columns: effect columns of `G`
        prior: standardized prior, $W = \\tau^{-1}\\phi^2 S$
        log10_lambda_bounds: integration range
        quad_tol: relative tolerance of the quadrature

    Returns:
        [`OracleResult`][blmmstats.toolkit.oracle.OracleResult] with the $\\log_{10}$ Bayes factor

    Usage:

    ```python
    from blmmstats.toolkit import LinearMixedModel
    from blmmstats.toolkit.oracle import bf_numeric
    from blmmstats.toolkit.priors import EffectPrior
    from blmmstats.toolkit.testing import TestData

    model = LinearMixedModel(TestData.related_dataset(n=40, p=1, seed=2))
    res = bf_numeric(model, [0], EffectPrior.spike_slab([1], phi=0.4))
    assert res.n_evaluations > 0
    ```
    """
    if not 0 < quad_tol < 1:
        raise ValueError(f"We expect quad_tol in (0, 1) but got {quad_tol}")
    if not log10_lambda_bounds[0] < log10_lambda_bounds[1]:
        raise ValueError(f"Invalid integration bounds {log10_lambda_bounds}")
    columns = list(columns)
    shape = _shape(prior, len(columns))
    alternative = MarginalLikelihood(model, columns, shape)
    if model.n <= model.dataset.q + alternative.rank + 2:
        raise InputError(
            f"We need n > q + rank(W) + 2 = {model.dataset.q + alternative.rank + 2} samples but got {model.n}"
        )
    oracle_evaluations_metric.inc()
    if alternative.rank == 0:
        return OracleResult(log10_bf=0.0, abs_error=0.0, n_evaluations=0, quad_tol=quad_tol)
    null = MarginalLikelihood(model, [], np.zeros((0, 0)))
    log_alt, err_alt, n_alt = _log_integral(alternative, log10_lambda_bounds, quad_tol, "alternative")
    log_null, err_null, n_null = _log_integral(null, log10_lambda_bounds, quad_tol, "null")
    return OracleResult(
        log10_bf=(log_alt - log_null) / LN10,
        abs_error=(err_alt + err_null) / LN10,
        n_evaluations=n_alt + n_null,
        quad_tol=quad_tol,
    )


def tau_integral_check(
    model: LinearMixedModel, columns: Sequence[int], prior: EffectPrior, lam: float
) -> TauIntegralCheck:
    """
    Closed form of the $\\tau$ integral at a fixed $\\lambda$ against direct quadrature over $\\log\\tau$.
    """
    columns = list(columns)
    marginal = MarginalLikelihood(model, columns, _shape(prior, len(columns)))
    _, q = marginal.quadratic(lam)
    a = marginal.a
    # v = log tau - log(2a/Q), the integrand peaks at v = 0
    u_star = np.log(2 * a / q)
    result = quad(
        lambda v: np.exp(a * (1 + v - np.exp(v))),
        -1.0 - 50.0 / a,
        5.0,
        epsrel=1e-9,
        epsabs=0.0,
        limit=QUAD_LIMIT,
        points=[0.0],
        full_output=True,
    )
    if len(result) > 3:
        raise OracleError(f"Quadrature over tau did not converge at lambda={lam}: {result[3]}", diagnostics={"q": q})
    numeric = float(np.log(result[0]) + a * u_star - a)
    return TauIntegralCheck(lam=float(lam), closed_form=marginal.tau_integral(q), numeric=numeric)


def _sweep_rows(dataset_n: int, model: LinearMixedModel, snps: Sequence[int], phi: float, quad_tol: float) -> list:
    null_fit = model.optimize_lambda(kappa=0)
    prior = EffectPrior.spike_slab([1], phi=phi)
    rows = []
    for j in snps:
        if np.ptp(model.dataset.G[:, j]) == 0:
            _logger.warning(f"Skipping SNP [{model.dataset.snp_id(j)}] without variance at n={dataset_n}")
            continue
        numeric = bf_numeric(model, [j], prior, quad_tol=quad_tol).log10_bf
        effect0 = model.gls_effect(null_fit.lambda_check, null_fit.tau_check, columns=[j])
        abf0 = BayesFactors.abf_prior(effect0, prior, kappa=0).log10_abf
        fit1 = model.optimize_lambda(kappa=1, columns=[j])
        effect1 = model.gls_effect(fit1.lambda_check, fit1.tau_check, columns=[j])
        abf1 = BayesFactors.abf_prior(effect1, prior, kappa=1).log10_abf
        rows.append((dataset_n, model.dataset.snp_id(j), numeric, abf0, abf1, abf0 - numeric, abf1 - numeric))
    return rows


SWEEP_COLUMNS = [
    "n",
    "snp_id",
    "log10_bf_numeric",
    "log10_abf_k0",
    "log10_abf_k1",
    "delta_k0",
    "delta_k1",
]


def abf_accuracy_sweep(
    sample_sizes: Sequence[int] = DEFAULT_SAMPLE_SIZES,
    n_snps: int = 20,
    seed: Optional[int] = None,
    data: Optional[AccuracyData] = None,
    phi: float = DEFAULT_SWEEP_PHI,
    quad_tol: float = DEFAULT_QUAD_TOL,
    executor: Optional[Executor] = None,
) -> pd.DataFrame:
    """
    ABF at both anchors against the numerical Bayes factor on nested subsamples of one related sample.

    Arguments:
        sample_sizes: subsample sizes, the data are simulated with the largest one
        n_snps: candidate SNPs tested one at a time
        seed: seed of the simulated data
        data: use these data instead of simulating
        phi: effect scale of the single-SNP prior
        quad_tol: quadrature tolerance of the numerical Bayes factor
        executor: runs sample sizes concurrently when given

    Returns:
        dataframe with columns `n`, `snp_id`, `log10_bf_numeric`, `log10_abf_k0`, `log10_abf_k1`, `delta_k0`,
        `delta_k1`, deltas being ABF minus numerical value
    """
    sample_sizes = sorted(int(n) for n in sample_sizes)
    if not sample_sizes or n_snps == 0:
        return pd.DataFrame([], columns=SWEEP_COLUMNS)
    if data is None:
        data = simulate_accuracy_data(max(sample_sizes), n_snps, seed=seed)
    snps = list(range(min(n_snps, data.dataset.p)))

    def one(n: int) -> list:
        try:
            return _sweep_rows(n, LinearMixedModel(data.subsample(n)), snps, phi, quad_tol)
        except OracleError:
            raise
        except BlmmError as e:
            _logger.warning(f"Skipping sample size [{n}] because of {e}")
            return []

    mapper = executor.map if executor is not None else map
    rows = [row for chunk in mapper(one, sample_sizes) for row in chunk]
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def accuracy_summary(table: pd.DataFrame) -> pd.DataFrame:
    """
    Per sample size: median absolute and signed error of both ABF anchors and the share of SNPs whose absolute
    error is below `ACCURACY_BAND` on the $\\log_{10}$ scale.
    """
    columns = [
        "n",
        "n_snps",
        "median_abs_delta_k0",
        "median_abs_delta_k1",
        "median_bias_k0",
        "median_bias_k1",
        "share_within_k0",
        "share_within_k1",
    ]
    if table.empty:
        return pd.DataFrame([], columns=columns)
    rows = []
    for n, group in table.groupby("n", sort=True):
        d0, d1 = group["delta_k0"].to_numpy(), group["delta_k1"].to_numpy()
        rows.append(
            (
                n,
                len(group),
                float(np.median(np.abs(d0))),
                float(np.median(np.abs(d1))),
                float(np.median(d0)),
                float(np.median(d1)),
                float(np.mean(np.abs(d0) < ACCURACY_BAND)),
                float(np.mean(np.abs(d1) < ACCURACY_BAND)),
            )
        )
    return pd.DataFrame(rows, columns=columns)
