from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as la
import scipy.stats as st

from .errors import CollinearEffectError, InvalidPriorError
from .lmm import GlsEffect, LinearMixedModel, VarianceFit
from .priors import DEFAULT_PHI_GRID, EffectPrior, PriorKind
from .utils import LN10, log10_weighted_sum, validate_probabilities

PSD_TOLERANCE = 1e-8


@dataclass
class AbfResult:
    """
    Approximate Bayes factor of one alternative model, on the $\\log_{10}$ scale.
    """

    log10_abf: float
    kappa: float
    w_description: str
    beta_check: np.ndarray
    quad_form: float


@dataclass
class ScoreStats:
    """
    Frequentist companions of the ABF: Wald statistic at the $\\kappa=1$ anchor, fixed-effect score statistic
    and variance component score statistic at the $\\kappa=0$ anchor.
    """

    wald: float
    score_fixed: float
    t_score: float


def effect_from_moments(beta_check: Sequence[float], v_check: np.ndarray, tau: float = 1.0) -> GlsEffect:
    """
    [`GlsEffect`][blmmstats.toolkit.lmm.GlsEffect] from a bare $(\\check\\beta, \\check V)$ pair.
    """
    beta = np.atleast_1d(np.asarray(beta_check, dtype=float))
    v = np.atleast_2d(np.asarray(v_check, dtype=float))
    gram = la.inv(v) / tau
    gram = (gram + gram.T) / 2
    return GlsEffect(
        beta_check=beta,
        v_check=v,
        gram=gram,
        score=gram @ beta,
        tau=tau,
        lam=0.0,
        rss_null=np.nan,
        rss_full=np.nan,
        rank=beta.shape[0],
    )


class BayesFactors:
    """
    Approximate Bayes factors of the Bayesian linear mixed model and their frequentist companions.

    For an effect estimate $(\\check\\beta, \\check V)$ and prior $\\beta \\sim N(0, W)$

    $$
    \\mathrm{ABF}(W) = |I + \\check V^{-1}W|^{-1/2}
    \\exp\\left(\\frac{1}{2}\\check\\beta'\\check V^{-1}W(I + \\check V^{-1}W)^{-1}\\check V^{-1}\\check\\beta\\right).
    $$

    All Bayes factors are returned on the $\\log_{10}$ scale.
    """

    @classmethod
    def abf_matrix(
        cls, effect: GlsEffect, W: np.ndarray, kappa: float = 0.0, description: str = "W"
    ) -> AbfResult:
        """
        ABF for an arbitrary PSD prior covariance.

        We factor $W = BB'$ from its clamped eigendecomposition and work with the symmetric
        $M = \\check\\tau B'G_x'G_xB$ and $z = \\check\\tau B'G_x'y_x$, so neither $W$ nor $\\check V$ has to be
        invertible:

        $$
        \\log\\mathrm{ABF} = -\\frac{1}{2}\\sum_i\\log(1 + d_i) + \\frac{1}{2}\\sum_i\\frac{(Q'z)_i^2}{1 + d_i},
        \\quad M = Q\\,\\mathrm{diag}(d)\\,Q'.
        $$

        Arguments:
            effect: GLS estimate at the anchor
            W: `p x p` prior covariance, rank deficiency allowed
            kappa: anchor the effect was computed at, recorded in the result
            description: prior tag recorded in the result

        Returns:
            [`AbfResult`][blmmstats.toolkit.abf.AbfResult]

        Usage:

        ```python
        import numpy as np
        from blmmstats.toolkit.abf import BayesFactors, effect_from_moments

        effect = effect_from_moments([0.4], [[0.01]])
        res = BayesFactors.abf_matrix(effect, np.array([[0.01]]))
        assert abs(res.log10_abf - BayesFactors.abf_scalar(0.4, 0.01, 0.01)) < 1e-12
        ```
        """
        W = np.atleast_2d(np.asarray(W, dtype=float))
        p = effect.p
        if W.shape != (p, p):
            raise InvalidPriorError(f"Prior covariance has shape {W.shape} but the effect has {p} columns")
        if not np.all(np.isfinite(W)):
            raise InvalidPriorError("Prior covariance contains non-finite entries")
        B = cls._psd_root(W)

        if B.shape[1] == 0:
            log_bf = 0.0
        else:
            M = effect.tau * B.T @ effect.gram @ B
            z = effect.tau * B.T @ effect.score
            d, Q = la.eigh((M + M.T) / 2)
            d = np.clip(d, 0.0, None)
            proj = Q.T @ z
            log_bf = -0.5 * np.sum(np.log1p(d)) + 0.5 * np.sum(proj**2 / (1.0 + d))

        return AbfResult(
            log10_abf=float(log_bf / LN10),
            kappa=kappa,
            w_description=description,
            beta_check=effect.beta_check,
            quad_form=max(effect.quad_form, 0.0),
        )

    @staticmethod
    def _psd_root(W: np.ndarray) -> np.ndarray:
        if not np.allclose(W, W.T, rtol=0, atol=1e-12 * max(np.abs(W).max(), 1.0)):
            raise InvalidPriorError("Prior covariance is not symmetric")
        e, E = la.eigh((W + W.T) / 2)
        norm = np.abs(e).max() if e.size else 0.0
        if e.size and e.min() < -PSD_TOLERANCE * norm:
            raise InvalidPriorError(f"Prior covariance has eigenvalue {e.min():.3e}, it is not PSD")
        keep = e > PSD_TOLERANCE * norm
        return E[:, keep] * np.sqrt(e[keep])

    @staticmethod
    def abf_scalar(beta_check: float, v_check: float, omega: float) -> float:
        """
        Single effect ABF

        $$
        \\mathrm{ABF}(\\omega) = \\sqrt{\\frac{\\check v}{\\check v + \\omega}}
        \\exp\\left(\\frac{1}{2}\\frac{\\omega}{\\check v + \\omega}\\frac{\\check\\beta^2}{\\check v}\\right).
        $$

        Arguments:
            beta_check: effect estimate
            v_check: its variance, positive
            omega: prior variance, non-negative

        Returns:
            $\\log_{10}\\mathrm{ABF}$

        Usage:

        ```python
        from blmmstats.toolkit.abf import BayesFactors

        assert abs(BayesFactors.abf_scalar(0.0, 1.0, 1.0) + 0.150515) < 1e-6
        ```
        """
        if not v_check > 0:
            raise ValueError(f"We expect v_check > 0 but got {v_check}")
        if omega < 0:
            raise ValueError(f"We expect omega >= 0 but got {omega}")
        shrink = omega / (v_check + omega)
        log_bf = -0.5 * np.log1p(omega / v_check) + 0.5 * shrink * beta_check**2 / v_check
        return float(log_bf / LN10)

    @classmethod
    def abf_prior(cls, effect: GlsEffect, prior: EffectPrior, kappa: float = 0.0) -> AbfResult:
        """
        ABF of a symbolic prior materialized at the $\\check\\tau$ of the effect.
        """
        if prior.p != effect.p:
            raise InvalidPriorError(f"Prior describes {prior.p} effects but the estimate has {effect.p}")
        if prior.kind == PriorKind.scaled_v:
            return AbfResult(
                log10_abf=cls.implicit_pvalue_abf(effect, prior.c),
                kappa=kappa,
                w_description=str(prior),
                beta_check=effect.beta_check,
                quad_form=max(effect.quad_form, 0.0),
            )
        return cls.abf_matrix(effect, prior.materialize(effect.tau), kappa=kappa, description=str(prior))

    @classmethod
    def abf_phi_grid(
        cls,
        effect: GlsEffect,
        prior: EffectPrior,
        phis: Sequence[float] = DEFAULT_PHI_GRID,
        weights: Optional[Sequence[float]] = None,
        kappa: float = 0.0,
    ) -> float:
        """
        Model-averaged ABF over a grid of effect scales

        $$
        \\mathrm{BF} = \\sum_i \\omega_i\\,\\mathrm{ABF}(W(\\phi_i)),
        $$

        combined on the log scale with `logsumexp`.

        Arguments:
            effect: GLS estimate at the anchor
            prior: prior family, its own `phi` is replaced by each grid value
            phis: grid of positive effect scales
            weights: grid weights summing to one, uniform by default
            kappa: anchor of the effect

        Returns:
            $\\log_{10}$ of the averaged Bayes factor
        """
        per_phi = cls.per_phi_log10(effect, prior, phis, kappa)
        return cls.average_log10(per_phi, weights)

    @classmethod
    def per_phi_log10(
        cls, effect: GlsEffect, prior: EffectPrior, phis: Sequence[float] = DEFAULT_PHI_GRID, kappa: float = 0.0
    ) -> np.ndarray:
        if len(phis) == 0:
            raise ValueError("We expect a non-empty phi grid")
        if not prior.has_phi:
            return np.array([cls.abf_prior(effect, prior, kappa).log10_abf])
        return np.array([cls.abf_prior(effect, prior.with_phi(phi), kappa).log10_abf for phi in phis])

    @staticmethod
    def average_log10(log10_values: Sequence[float], weights: Optional[Sequence[float]] = None) -> float:
        """
        $\\log_{10}\\sum_i \\omega_i 10^{x_i}$, uniform weights by default.
        """
        values = np.asarray(log10_values, dtype=float)
        if values.size == 0:
            raise ValueError("We expect a non-empty grid")
        if weights is None:
            weights = np.full(values.size, 1.0 / values.size)
        weights = validate_probabilities(weights, "grid weights")
        if weights.shape != values.shape:
            raise ValueError(f"Got {weights.size} weights for {values.size} values")
        return log10_weighted_sum(values, weights)

    @staticmethod
    def implicit_pvalue_abf(effect: GlsEffect, c: float) -> float:
        """
        Closed form ABF of the implicit p-value prior $W = c\\check V$

        $$
        \\mathrm{ABF}(c\\check V) = \\left(\\frac{1}{c + 1}\\right)^{p/2}
        \\exp\\left(\\frac{1}{2}\\frac{c}{c + 1}\\check\\beta'\\check V^{-1}\\check\\beta\\right),
        $$

        a monotone transform of the Wald ($\\kappa=1$) or score ($\\kappa=0$) statistic.
        """
        if not c > 0:
            raise ValueError(f"We expect c > 0 but got {c}")
        q = max(effect.quad_form, 0.0)
        log_bf = -0.5 * effect.rank * np.log1p(c) + 0.5 * c / (c + 1.0) * q
        return float(log_bf / LN10)

    @staticmethod
    def wald_stat(effect_at_kappa1: GlsEffect) -> float:
        """
        Multivariate Wald statistic $\\hat\\beta'\\hat V^{-1}\\hat\\beta$ at the $\\kappa=1$ anchor.
        """
        if not effect_at_kappa1.full_rank:
            raise CollinearEffectError(
                f"Wald statistic needs an invertible covariance, rank {effect_at_kappa1.rank} of {effect_at_kappa1.p}"
            )
        beta = effect_at_kappa1.beta_check
        return float(max(beta @ la.solve(effect_at_kappa1.v_check, beta, assume_a="pos"), 0.0))

    @staticmethod
    def _null_score_vector(model: LinearMixedModel, null_fit: VarianceFit, columns: Optional[Sequence[int]]):
        """
        $u = G'\\tilde\\Sigma^{-1}(y - X\\tilde\\alpha)$ and the blocks of $[X\\,G]'\\tilde\\Sigma^{-1}[X\\,G]$.
        """
        y, X, G = model.rotated()
        if columns is not None:
            G = G[:, list(columns)]
        h = 1.0 / (1.0 + null_fit.lambda_check * model.eigenvalues)
        r = y - X @ null_fit.alpha
        u = G.T @ (h * r)
        GtG = G.T @ (G * h[:, None])
        GtX = G.T @ (X * h[:, None])
        XtX = X.T @ (X * h[:, None])
        return u, GtG, GtX, XtX

    @classmethod
    def score_stat_fixed(
        cls, model: LinearMixedModel, null_fit: VarianceFit, columns: Optional[Sequence[int]] = None
    ) -> float:
        """
        Fixed-effect score statistic at the null anchor

        $$
        \\tilde\\tau(y - X\\tilde\\alpha)'\\tilde\\Sigma^{-1}G\\tilde Q G'\\tilde\\Sigma^{-1}(y - X\\tilde\\alpha),
        \\quad \\tilde Q^{-1} = G'\\tilde\\Sigma^{-1}G - G'\\tilde\\Sigma^{-1}X(X'\\tilde\\Sigma^{-1}X)^{-1}
        X'\\tilde\\Sigma^{-1}G.
        $$

        It equals $\\hat\\beta'\\hat V^{-1}\\hat\\beta$ evaluated at $(\\tilde\\lambda, \\tilde\\tau)$.
        """
        if null_fit.kappa != 0:
            raise ValueError(f"Score statistic needs the null anchor, got kappa={null_fit.kappa}")
        u, GtG, GtX, XtX = cls._null_score_vector(model, null_fit, columns)
        q_inv = GtG - GtX @ la.solve(XtX, GtX.T, assume_a="pos")
        q_inv = (q_inv + q_inv.T) / 2
        try:
            factor = la.cho_factor(q_inv, lower=True)
        except la.LinAlgError as e:
            raise CollinearEffectError(f"Score information matrix is singular because of {e}")
        return float(max(null_fit.tau_check * u @ la.cho_solve(factor, u), 0.0))

    @classmethod
    def variance_component_score(
        cls,
        model: LinearMixedModel,
        null_fit: VarianceFit,
        M: np.ndarray,
        columns: Optional[Sequence[int]] = None,
    ) -> float:
        """
        Variance component score statistic
        $T = \\tilde\\tau^2(y - X\\tilde\\alpha)'\\tilde\\Sigma^{-1}GMG'\\tilde\\Sigma^{-1}(y - X\\tilde\\alpha)$.
        """
        M = np.atleast_2d(np.asarray(M, dtype=float))
        cls._psd_root(M)
        u, _, _, _ = cls._null_score_vector(model, null_fit, columns)
        if M.shape != (u.size, u.size):
            raise InvalidPriorError(f"Kernel matrix has shape {M.shape} but there are {u.size} effects")
        return float(max(null_fit.tau_check**2 * u @ M @ u, 0.0))

    @staticmethod
    def chi2_pvalue(statistic: float, df: int) -> float:
        """Upper tail of $\\chi^2_{df}$, p-value of the Wald and fixed-effect score statistics."""
        if df < 1:
            return np.nan
        return float(st.chi2.sf(statistic, df))

    @classmethod
    def wald_pvalue(cls, statistic: float, effect: GlsEffect) -> float:
        """$\\chi^2$ p-value of the Wald statistic, degrees of freedom are the rank of the effect design."""
        return cls.chi2_pvalue(statistic, effect.rank) if np.isfinite(statistic) else np.nan

    @classmethod
    def score_pvalue(cls, statistic: float, effect: GlsEffect) -> float:
        """
        $\\chi^2$ p-value of the fixed-effect score statistic with `rank` degrees of freedom.

        Usage:

        ```python
        import numpy as np
        from blmmstats.toolkit.abf import BayesFactors
        from blmmstats.toolkit.lmm import LinearMixedModel
        from blmmstats.toolkit.testing import TestData

        model = LinearMixedModel(TestData.unrelated_dataset(n=60, p=3, seed=2))
        fit = model.optimize_lambda(kappa=0)
        effect = model.gls_effect(fit.lambda_check, fit.tau_check, columns=[0, 1])
        stat = BayesFactors.score_stat_fixed(model, fit, [0, 1])
        assert BayesFactors.score_pvalue(stat, effect) == BayesFactors.chi2_pvalue(stat, 2)
        ```
        """
        return cls.chi2_pvalue(statistic, effect.rank) if np.isfinite(statistic) else np.nan

    @classmethod
    def score_stats(
        cls,
        model: LinearMixedModel,
        null_fit: VarianceFit,
        effect_at_kappa1: GlsEffect,
        M: Optional[np.ndarray] = None,
        columns: Optional[Sequence[int]] = None,
    ) -> ScoreStats:
        p = effect_at_kappa1.p
        return ScoreStats(
            wald=cls.wald_stat(effect_at_kappa1),
            score_fixed=cls.score_stat_fixed(model, null_fit, columns),
            t_score=cls.variance_component_score(model, null_fit, np.eye(p) if M is None else M, columns),
        )
