import logging
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import scipy.linalg as la
from scipy.optimize import minimize_scalar

from .errors import (
    CollinearEffectError,
    DegenerateKinshipError,
    EmptyGenotypeError,
    InputError,
    NonFiniteEntryError,
    OptimizationError,
    PerfectFitError,
    SingularDesignError,
)

DEFAULT_LAMBDA_BOUNDS = (1e-6, 1e6)
DEFAULT_GRID_POINTS = 64
DEFAULT_XATOL = 1e-6
KINSHIP_CLAMP = 1e-8
FLAT_TOLERANCE = 1e-10


@dataclass
class Dataset:
    """
    Observed quantities of the linear mixed model

    $$
    y = X\\alpha + G\\beta + u + e, \\quad u \\sim N(0, \\lambda\\tau^{-1}K), \\quad e \\sim N(0, \\tau^{-1}I).
    $$

    Arguments:
        y: response vector of length `n`
        X: fixed covariates `n x q`, first column is the all-ones intercept
        G: effect covariates `n x p` (genotype dosages), may have zero columns
        K: symmetric kinship matrix `n x n`, `None` means no random effect
        sample_ids: optional sample identifiers
        snp_ids: optional identifiers of columns of `G`

    Usage:

    ```python
    import numpy as np
    from blmmstats.toolkit import Dataset

    rng = np.random.default_rng(1)
    x = rng.normal(size=20)
    dataset = Dataset(
        y=0.5 * x + rng.normal(size=20),
        X=np.column_stack([np.ones(20), x]),
        G=rng.binomial(2, 0.3, size=(20, 3)).astype(float),
    )
    assert dataset.n == 20 and dataset.p == 3
    ```
    """

    y: np.ndarray
    X: np.ndarray
    G: np.ndarray
    K: Optional[np.ndarray] = None
    sample_ids: Optional[List[str]] = None
    snp_ids: Optional[List[str]] = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if self.y.ndim != 1:
            raise InputError(f"We expect y to be a vector but it has shape {self.y.shape}")
        n = self.y.shape[0]

        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X.reshape(-1, 1)
        self.G = np.asarray(self.G, dtype=float)
        if self.G.ndim == 1:
            self.G = self.G.reshape(-1, 1)

        for name, a in [("X", self.X), ("G", self.G)]:
            if a.shape[0] != n:
                raise InputError(f"{name} has {a.shape[0]} rows but y has {n} entries")
        for name, a in [("y", self.y), ("X", self.X), ("G", self.G)]:
            if not np.all(np.isfinite(a)):
                raise NonFiniteEntryError(f"{name} contains non-finite entries")

        q = self.X.shape[1]
        if q == 0 or not np.all(self.X[:, 0] == 1.0):
            raise InputError("We expect the first column of X to be the all-ones intercept")
        if n < q + 1:
            raise InputError(f"We need at least q + 1 = {q + 1} samples but got {n}")
        if np.linalg.matrix_rank(self.X) < q:
            raise SingularDesignError(f"Covariate matrix X of shape {self.X.shape} is not of full column rank")

        if self.K is not None:
            self.K = np.asarray(self.K, dtype=float)
            if self.K.shape != (n, n):
                raise InputError(f"Kinship has shape {self.K.shape} but we expect ({n}, {n})")
            if not np.all(np.isfinite(self.K)):
                raise NonFiniteEntryError("Kinship contains non-finite entries")
            scale = max(1.0, np.abs(self.K).max())
            if not np.allclose(self.K, self.K.T, rtol=0, atol=1e-10 * scale):
                raise DegenerateKinshipError("Kinship matrix is not symmetric")

        if self.snp_ids is not None and len(self.snp_ids) != self.p:
            raise InputError(f"Got {len(self.snp_ids)} SNP ids for {self.p} columns of G")
        if self.sample_ids is not None and len(self.sample_ids) != n:
            raise InputError(f"Got {len(self.sample_ids)} sample ids for {n} samples")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def q(self) -> int:
        return self.X.shape[1]

    @property
    def p(self) -> int:
        return self.G.shape[1]

    def snp_id(self, j: int) -> str:
        return self.snp_ids[j] if self.snp_ids is not None else f"snp{j}"

    def subset(self, rows: Sequence[int]) -> "Dataset":
        """
        Sample subset, kinship is sliced on both axes.
        """
        rows = np.asarray(rows)
        return Dataset(
            y=self.y[rows],
            X=self.X[rows],
            G=self.G[rows],
            K=self.K[np.ix_(rows, rows)] if self.K is not None else None,
            sample_ids=[self.sample_ids[i] for i in rows] if self.sample_ids is not None else None,
            snp_ids=self.snp_ids,
        )

    def with_effects(self, G: np.ndarray, snp_ids: Optional[List[str]] = None) -> "Dataset":
        return Dataset(y=self.y, X=self.X, G=G, K=self.K, sample_ids=self.sample_ids, snp_ids=snp_ids)


@dataclass
class CovarianceModel:
    """
    Marginal correlation $\\Sigma(\\lambda) = I + \\lambda K$ held in the eigenbasis of `K`.

    The lower triangular factor is computed lazily, the optimizer never needs it.
    """

    lam: float
    log_det_sigma: float
    eigenvalues: np.ndarray = field(repr=False)
    basis: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def inverse_weights(self) -> np.ndarray:
        return 1.0 / (1.0 + self.lam * self.eigenvalues)

    @cached_property
    def sigma(self) -> np.ndarray:
        n = self.eigenvalues.shape[0]
        if self.basis is None:
            return np.eye(n)
        return (self.basis * (1.0 + self.lam * self.eigenvalues)) @ self.basis.T

    @cached_property
    def sigma_factor(self) -> np.ndarray:
        try:
            return la.cholesky(self.sigma, lower=True)
        except la.LinAlgError as e:
            raise DegenerateKinshipError(f"Cannot factorize Sigma at lambda={self.lam} because of {e}")

    def inverse_sqrt(self) -> np.ndarray:
        """Symmetric inverse square root $\\Sigma^{-1/2}$."""
        n = self.eigenvalues.shape[0]
        if self.basis is None:
            return np.eye(n)
        return (self.basis * np.sqrt(self.inverse_weights)) @ self.basis.T


@dataclass
class GlsEffect:
    """
    GLS estimate of the effects of interest at a fixed $(\\lambda, \\tau)$.

    `gram` and `score` are $G_x'G_x$ and $G_x'y_x$ of the whitened design projected off the covariates,
    the ABF is computed from them so that singular `gram` is allowed.
    """

    beta_check: np.ndarray
    v_check: np.ndarray
    gram: np.ndarray
    score: np.ndarray
    tau: float
    lam: float
    rss_null: float
    rss_full: float
    rank: int

    @property
    def p(self) -> int:
        return self.gram.shape[0]

    @property
    def full_rank(self) -> bool:
        return self.rank == self.p

    @property
    def quad_form(self) -> float:
        """$\\check\\beta'\\check V^{-1}\\check\\beta = \\tau s'A^{+}s$."""
        return float(self.tau * self.score @ self.beta_check)


@dataclass
class VarianceFit:
    """
    Laplace anchor point $(\\check\\lambda(\\kappa), \\check\\tau(\\kappa))$ of the profile objective.
    """

    kappa: float
    lambda_check: float
    tau_check: float
    alpha: np.ndarray
    objective_value: float
    converged: bool
    iterations: int
    flat: bool = False
    columns: Optional[Tuple[int, ...]] = None


class NullProjection:
    """
    Whitened covariates at a fixed $\\lambda$, QR factorized once and reused for every effect column.

    Works in any orthonormal basis, the inner products it produces are rotation invariant.
    """

    def __init__(self, y_w: np.ndarray, X_w: np.ndarray, lam: float = 0.0):
        self.lam = lam
        self.n = y_w.shape[0]
        self._q_basis, r = np.linalg.qr(X_w)
        diag = np.abs(np.diag(r))
        if diag.min() <= 1e-10 * max(diag.max(), 1.0):
            raise SingularDesignError(f"Whitened covariates are rank deficient at lambda={lam}")
        self._r = r
        self._y_w = y_w
        self.alpha = la.solve_triangular(r, self._q_basis.T @ y_w)
        self.residual = y_w - X_w @ self.alpha
        self.rss = float(self.residual @ self.residual)

    def project(self, G_w: np.ndarray) -> np.ndarray:
        """$G_x = (I - P_x)G_w$."""
        return G_w - self._q_basis @ (self._q_basis.T @ G_w)

    @property
    def log_det_gram(self) -> float:
        """$\\log|X_w'X_w|$."""
        return float(2 * np.sum(np.log(np.abs(np.diag(self._r)))))

    def covariate_coefficients(self, target: np.ndarray) -> np.ndarray:
        return la.solve_triangular(self._r, self._q_basis.T @ target)

    def effect(self, G_w: np.ndarray, tau: float, allow_singular: bool = False) -> GlsEffect:
        G_x = self.project(G_w)
        gram = G_x.T @ G_x
        gram = (gram + gram.T) / 2
        score = G_x.T @ self.residual
        p = gram.shape[0]

        eig = np.linalg.eigvalsh(gram) if p else np.zeros(0)
        top = eig.max() if p else 0.0
        rank = int(np.sum(eig > 1e-10 * max(top, 1e-300))) if top > 0 else 0

        if rank == p:
            try:
                factor = la.cho_factor(gram, lower=True)
                beta = la.cho_solve(factor, score)
                v = la.cho_solve(factor, np.eye(p)) / tau
            except la.LinAlgError:
                rank = p - 1
        if rank < p:
            if not allow_singular:
                raise CollinearEffectError(f"Effect design of {p} columns has rank {rank} at lambda={self.lam}")
            pinv = np.linalg.pinv(gram, rcond=1e-10, hermitian=True)
            beta = pinv @ score
            v = pinv / tau

        fitted = G_x @ beta
        rss_full = float((self.residual - fitted) @ (self.residual - fitted))
        return GlsEffect(
            beta_check=beta,
            v_check=(v + v.T) / 2,
            gram=gram,
            score=score,
            tau=tau,
            lam=self.lam,
            rss_null=self.rss,
            rss_full=rss_full,
            rank=rank,
        )


class LinearMixedModel:
    """
    Linear mixed model bound to one dataset.

    The eigendecomposition $K = UDU'$ is computed once, then $\\Sigma(\\lambda) = U(I + \\lambda D)U'$ and every
    solve at a new $\\lambda$ costs a rescaling of the rotated data. An absent or all-zero kinship uses the identity
    basis.

    Arguments:
        dataset: observed data
        lambda_bounds: search box of the variance ratio
        grid_points: coarse log-grid size locating the bracket
        xatol: bracket width on $\\log_{10}\\lambda$ at convergence

    Usage:

    ```python
    import numpy as np
    from blmmstats.toolkit import LinearMixedModel
    from blmmstats.toolkit.testing import TestData

    model = LinearMixedModel(TestData.related_dataset(n=60, p=2, seed=3))
    null_fit = model.optimize_lambda(kappa=0)
    effect = model.gls_effect(null_fit.lambda_check, null_fit.tau_check, columns=[0])
    assert null_fit.tau_check > 0 and effect.v_check.shape == (1, 1)
    ```
    """

    def __init__(
        self,
        dataset: Dataset,
        lambda_bounds: Tuple[float, float] = DEFAULT_LAMBDA_BOUNDS,
        grid_points: int = DEFAULT_GRID_POINTS,
        xatol: float = DEFAULT_XATOL,
    ):
        self._logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
        if not 0 < lambda_bounds[0] < lambda_bounds[1]:
            raise ValueError(f"Invalid lambda bounds {lambda_bounds}")
        self.dataset = dataset
        self.lambda_bounds = lambda_bounds
        self.grid_points = grid_points
        self.xatol = xatol

        K = dataset.K
        if K is None or not np.any(K):
            self.has_kinship = False
            self._basis = None
            self._eigenvalues = np.zeros(dataset.n)
            self._y_rot, self._X_rot, self._G_rot = dataset.y, dataset.X, dataset.G
        else:
            self.has_kinship = True
            d, U = la.eigh(K)
            if d.min() < -KINSHIP_CLAMP:
                raise DegenerateKinshipError(f"Kinship has eigenvalue {d.min():.3e} below -{KINSHIP_CLAMP}")
            self._eigenvalues = np.clip(d, 0.0, None)
            self._basis = U
            self._y_rot = U.T @ dataset.y
            self._X_rot = U.T @ dataset.X
            self._G_rot = U.T @ dataset.G

        self._projection = lru_cache(maxsize=16)(self._null_projection)

    @property
    def n(self) -> int:
        return self.dataset.n

    @property
    def eigenvalues(self) -> np.ndarray:
        return self._eigenvalues

    def rotated(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Data in the eigenbasis of `K`: $(U'y, U'X, U'G)$."""
        return self._y_rot, self._X_rot, self._G_rot

    def log_det_sigma(self, lam: float) -> float:
        return float(np.sum(np.log1p(lam * self._eigenvalues)))

    def build_covariance(self, lam: float) -> CovarianceModel:
        """
        Factorized $\\Sigma(\\lambda) = I + \\lambda K$ and its log-determinant.
        """
        if lam < 0 or not np.isfinite(lam):
            raise ValueError(f"We expect lambda >= 0 but got {lam}")
        return CovarianceModel(
            lam=float(lam),
            log_det_sigma=self.log_det_sigma(lam),
            eigenvalues=self._eigenvalues,
            basis=self._basis,
        )

    def _null_projection(self, lam: float) -> NullProjection:
        sqrt_h = np.sqrt(1.0 / (1.0 + lam * self._eigenvalues))
        return NullProjection(self._y_rot * sqrt_h, self._X_rot * sqrt_h[:, None], lam)

    def null_projection(self, lam: Union[float, CovarianceModel]) -> NullProjection:
        return self._projection(float(_lam(lam)))

    def whitened_effects(self, lam: float, columns: Optional[Sequence[int]] = None) -> np.ndarray:
        sqrt_h = np.sqrt(1.0 / (1.0 + lam * self._eigenvalues))
        G = self._G_rot if columns is None else self._G_rot[:, list(columns)]
        return G * sqrt_h[:, None]

    def gls_null_alpha(self, cov: Union[float, CovarianceModel]) -> np.ndarray:
        """
        Null-model GLS coefficients $\\tilde\\alpha(\\lambda) = (X'\\Sigma^{-1}X)^{-1}X'\\Sigma^{-1}y$.
        """
        return self.null_projection(cov).alpha.copy()

    def gls_effect(
        self,
        cov: Union[float, CovarianceModel],
        tau: float,
        columns: Optional[Sequence[int]] = None,
        allow_singular: bool = False,
    ) -> GlsEffect:
        """
        GLS estimate $\\hat\\beta(\\lambda) = (G_x'G_x)^{-1}G_x'y_x$ and
        $\\hat V(\\lambda, \\tau) = \\tau^{-1}(G_x'G_x)^{-1}$ of the selected columns of `G`.

        Arguments:
            cov: covariance model or the variance ratio itself
            tau: inverse residual variance
            columns: indices into `G`, all columns by default
            allow_singular: use the pseudo-inverse instead of raising on a collinear design

        Returns:
            [`GlsEffect`][blmmstats.toolkit.lmm.GlsEffect]
        """
        if tau <= 0:
            raise ValueError(f"We expect tau > 0 but got {tau}")
        lam = _lam(cov)
        G_w = self.whitened_effects(lam, columns)
        if G_w.shape[1] == 0:
            raise ValueError("We need at least one effect column")
        return self.null_projection(lam).effect(G_w, tau, allow_singular=allow_singular)

    def residual_sums(self, lam: float, columns: Optional[Sequence[int]] = None) -> Tuple[float, float]:
        """$(RSS_{null}(\\lambda), RSS_{full}(\\lambda))$ on the whitened scale."""
        projection = self.null_projection(lam)
        if columns is not None and len(columns) == 0:
            return projection.rss, projection.rss
        G_x = projection.project(self.whitened_effects(lam, columns))
        if G_x.shape[1] == 0:
            return projection.rss, projection.rss
        beta = np.linalg.lstsq(G_x, projection.residual, rcond=None)[0]
        resid = projection.residual - G_x @ beta
        return projection.rss, float(resid @ resid)

    def tau_profile(
        self, cov: Union[float, CovarianceModel], kappa: float, columns: Optional[Sequence[int]] = None
    ) -> float:
        """
        $\\hat\\tau(\\lambda;\\kappa) = n / \\{(1-\\kappa)RSS_{null}(\\lambda) + \\kappa RSS_{full}(\\lambda)\\}$.
        """
        if not 0 <= kappa <= 1:
            raise ValueError(f"We expect kappa in [0, 1] but got {kappa}")
        lam = _lam(cov)
        rss_null, rss_full = self.residual_sums(lam, columns) if kappa > 0 else (self.null_projection(lam).rss, 0.0)
        rss = (1 - kappa) * rss_null + kappa * rss_full
        scale = float(self._y_rot @ self._y_rot)
        if rss <= 1e-12 * max(scale, 1e-300):
            raise PerfectFitError(f"Residual sum of squares {rss:.3e} vanishes at lambda={lam}, kappa={kappa}")
        return self.n / rss

    def profile_objective(self, lam: float, kappa: float, columns: Optional[Sequence[int]] = None) -> float:
        """
        $l(\\lambda;\\kappa) = \\frac{n}{2}\\log\\hat\\tau(\\lambda;\\kappa) - \\frac{1}{2}\\log|\\Sigma(\\lambda)|$.
        """
        if lam < 0:
            raise ValueError(f"We expect lambda >= 0 but got {lam}")
        tau = self.tau_profile(lam, kappa, columns)
        return 0.5 * self.n * np.log(tau) - 0.5 * self.log_det_sigma(lam)

    def profile_objective_grid(
        self, kappa: float, log10_lambdas: np.ndarray, columns: Optional[Sequence[int]] = None
    ) -> pd.DataFrame:
        """
        Profile objective on a grid, dataframe with columns `log10_lambda`, `objective`, `tau`.
        """
        rows = []
        for t in log10_lambdas:
            lam = 10.0**t
            with np.errstate(all="ignore"):
                try:
                    tau = self.tau_profile(lam, kappa, columns)
                    objective = 0.5 * self.n * np.log(tau) - 0.5 * self.log_det_sigma(lam)
                except (PerfectFitError, SingularDesignError):
                    tau, objective = np.nan, np.nan
            rows.append((t, objective, tau))
        return pd.DataFrame(rows, columns=["log10_lambda", "objective", "tau"])

    def optimize_lambda(self, kappa: float = 0.0, columns: Optional[Sequence[int]] = None) -> VarianceFit:
        """
        Maximize $l(\\lambda;\\kappa)$ over the search box.

        A coarse grid on $\\log_{10}\\lambda$ locates the bracket around the best grid point, bounded Brent search
        refines it. Without kinship the objective is constant, we return the lower bound with `flat` set.

        Arguments:
            kappa: anchor, 0 for the null model, 1 for the full model with `columns`
            columns: effect columns entering the full model, all by default

        Returns:
            [`VarianceFit`][blmmstats.toolkit.lmm.VarianceFit]
        """
        if not 0 <= kappa <= 1:
            raise ValueError(f"We expect kappa in [0, 1] but got {kappa}")
        if kappa > 0 and columns is None:
            columns = tuple(range(self.dataset.p))
        columns = tuple(columns) if columns is not None else None
        lo, hi = np.log10(self.lambda_bounds[0]), np.log10(self.lambda_bounds[1])

        if not self.has_kinship:
            return self._fit_at(self.lambda_bounds[0], kappa, columns, converged=True, iterations=0, flat=True)

        grid = np.linspace(lo, hi, self.grid_points)
        diagnostics = self.profile_objective_grid(kappa, grid, columns)
        values = diagnostics["objective"].to_numpy()
        if not np.all(np.isfinite(values)):
            if np.all(np.isnan(diagnostics["tau"])):
                # re-raise the error shared by every grid point
                self.tau_profile(10.0 ** grid[0], kappa, columns)
            raise OptimizationError(
                f"Profile objective is not finite on {np.sum(~np.isfinite(values))} of {len(grid)} grid points",
                diagnostics=diagnostics,
            )
        if np.ptp(values) < FLAT_TOLERANCE:
            return self._fit_at(self.lambda_bounds[0], kappa, columns, converged=True, iterations=len(grid), flat=True)

        i = int(np.argmax(values))
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        res = minimize_scalar(
            lambda t: -self.profile_objective(10.0**t, kappa, columns),
            bounds=(a, b),
            method="bounded",
            options={"xatol": self.xatol},
        )
        best_t = float(res.x) if -res.fun >= values[i] else float(grid[i])
        self._logger.debug(f"Lambda search kappa={kappa} columns={columns} converged at log10 lambda={best_t:.6f}")
        return self._fit_at(
            10.0**best_t, kappa, columns, converged=bool(res.success), iterations=len(grid) + int(res.nfev)
        )

    def _fit_at(
        self,
        lam: float,
        kappa: float,
        columns: Optional[Tuple[int, ...]],
        converged: bool,
        iterations: int,
        flat: bool = False,
    ) -> VarianceFit:
        tau = self.tau_profile(lam, kappa, columns)
        projection = self.null_projection(lam)
        if kappa == 0 or not columns:
            alpha = projection.alpha.copy()
        else:
            G_w = self.whitened_effects(lam, columns)
            G_x = projection.project(G_w)
            beta = np.linalg.lstsq(G_x, projection.residual, rcond=None)[0]
            sqrt_h = np.sqrt(1.0 / (1.0 + lam * self._eigenvalues))
            alpha = projection.covariate_coefficients(self._y_rot * sqrt_h - G_w @ beta)
        return VarianceFit(
            kappa=kappa,
            lambda_check=float(lam),
            tau_check=tau,
            alpha=alpha,
            objective_value=0.5 * self.n * np.log(tau) - 0.5 * self.log_det_sigma(lam),
            converged=converged,
            iterations=iterations,
            flat=flat,
            columns=columns,
        )

    def whiten(self, lam: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        $(\\Sigma^{-1/2}y, \\Sigma^{-1/2}X, \\Sigma^{-1/2}G)$ with the symmetric inverse square root.
        """
        if not self.has_kinship or lam == 0:
            return self.dataset.y.copy(), self.dataset.X.copy(), self.dataset.G.copy()
        sqrt_h = np.sqrt(1.0 / (1.0 + lam * self._eigenvalues))
        U = self._basis
        return (
            U @ (self._y_rot * sqrt_h),
            U @ (self._X_rot * sqrt_h[:, None]),
            U @ (self._G_rot * sqrt_h[:, None]),
        )


def _lam(cov: Union[float, CovarianceModel]) -> float:
    return cov.lam if isinstance(cov, CovarianceModel) else float(cov)


def build_covariance(lam: float, K: Optional[np.ndarray]) -> CovarianceModel:
    """
    Factorized $\\Sigma(\\lambda) = I + \\lambda K$ for a standalone kinship matrix.
    """
    if lam < 0:
        raise ValueError(f"We expect lambda >= 0 but got {lam}")
    K = np.asarray(K, dtype=float)
    d, U = la.eigh(K)
    if d.min() < -KINSHIP_CLAMP:
        raise DegenerateKinshipError(f"Kinship has eigenvalue {d.min():.3e} below -{KINSHIP_CLAMP}")
    d = np.clip(d, 0.0, None)
    return CovarianceModel(lam=float(lam), log_det_sigma=float(np.sum(np.log1p(lam * d))), eigenvalues=d, basis=U)


def estimate_kinship(genotypes: np.ndarray) -> np.ndarray:
    """
    Genomic relationship matrix $K = ZZ'/m$ of column-standardized genotypes, zero-variance columns dropped.

    Arguments:
        genotypes: `n x m` dosage matrix

    Returns:
        `n x n` kinship matrix with diagonal mean close to one
    """
    genotypes = np.asarray(genotypes, dtype=float)
    if genotypes.ndim != 2 or genotypes.shape[1] < 1:
        raise EmptyGenotypeError("We need at least one genotype column to estimate kinship")
    if not np.all(np.isfinite(genotypes)):
        raise NonFiniteEntryError("Genotypes contain non-finite entries")
    sd = genotypes.std(axis=0)
    keep = sd > 1e-12
    if not np.any(keep):
        raise EmptyGenotypeError(f"All {genotypes.shape[1]} genotype columns have zero variance")
    Z = (genotypes[:, keep] - genotypes[:, keep].mean(axis=0)) / sd[keep]
    K = Z @ Z.T / Z.shape[1]
    return (K + K.T) / 2
