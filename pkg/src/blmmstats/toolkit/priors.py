from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.stats as st

from .errors import InvalidPriorError

DEFAULT_PHI_GRID = (0.1, 0.2, 0.4, 0.8, 1.6)
BETA_WEIGHT_A = 1.0
BETA_WEIGHT_B = 25.0


class PriorKind(str, Enum):
    """
    Family of the prior covariance $W$ of the effects of interest.
    """

    burden = "burden"
    skat = "skat"
    skato = "skato"
    cv = "cv"
    spike_slab = "spike_slab"
    scaled_v = "scaled_v"


def snp_weights(mafs: Sequence[float], normalize: bool = False) -> np.ndarray:
    """
    Marginal SNP weights $w_j = \\mathrm{Beta}(\\mathrm{MAF}_j; 1, 25) = 25(1 - \\mathrm{MAF}_j)^{24}$.

    Arguments:
        mafs: minor allele frequencies in $(0, 0.5]$
        normalize: rescale weights to sum to one (set tests)

    Returns:
        weight vector

    Usage:

    ```python
    from blmmstats.toolkit.priors import snp_weights

    w = snp_weights([0.01, 0.05, 0.25], normalize=True)
    assert abs(w.sum() - 1) < 1e-12
    ```
    """
    mafs = np.asarray(mafs, dtype=float)
    if mafs.size == 0:
        raise InvalidPriorError("We need at least one MAF to compute weights")
    if np.any(~np.isfinite(mafs)) or np.any(mafs <= 0) or np.any(mafs > 0.5):
        raise InvalidPriorError(f"We expect MAF in (0, 0.5] but got range [{mafs.min()}, {mafs.max()}]")
    w = st.beta(BETA_WEIGHT_A, BETA_WEIGHT_B).pdf(mafs)
    return w / w.sum() if normalize else w


@dataclass(frozen=True)
class EffectPrior:
    """
    Symbolic specification of the prior covariance $W$ of $\\beta$.

    | kind | $W / \\phi^2$ |
    | --- | --- |
    | `burden` | $(\\sqrt{w})(\\sqrt{w})'$ |
    | `skat` | $\\mathrm{diag}(w)$ |
    | `skato` | $(1-\\rho)\\,\\mathrm{diag}(w) + \\rho(\\sqrt{w})(\\sqrt{w})'$ |
    | `cv` | $\\mathrm{diag}(e_i)$ |
    | `spike_slab` | $\\mathrm{diag}(\\gamma)$ |
    | `scaled_v` | $c\\check V$ (no $\\phi$) |

    Standardized priors are multiplied by $\\check\\tau^{-1}$ when materialized.

    Usage:

    ```python
    import numpy as np
    from blmmstats.toolkit.priors import EffectPrior

    prior = EffectPrior.skato([0.5, 0.5], rho=1.0, phi=1.0)
    assert np.allclose(prior.materialize(tau_check=1.0), 0.5)
    ```
    """

    kind: PriorKind
    weights: Tuple[float, ...]
    phi: float = 1.0
    standardized: bool = True
    rho: Optional[float] = None
    index: Optional[int] = None
    gamma: Optional[Tuple[int, ...]] = None
    c: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PriorKind(self.kind))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.weights) == 0:
            raise InvalidPriorError("Prior needs at least one effect")
        if any(not np.isfinite(w) or w < 0 for w in self.weights):
            raise InvalidPriorError(f"We expect non-negative finite weights but got {self.weights}")
        if not np.isfinite(self.phi) or self.phi <= 0:
            raise InvalidPriorError(f"We expect phi > 0 but got {self.phi}")
        if self.kind == PriorKind.skato and (self.rho is None or not 0 <= self.rho <= 1):
            raise InvalidPriorError(f"We expect rho in [0, 1] but got {self.rho}")
        if self.kind == PriorKind.cv and (self.index is None or not 0 <= self.index < self.p):
            raise InvalidPriorError(f"Common variant index {self.index} is outside of 0..{self.p - 1}")
        if self.kind == PriorKind.spike_slab:
            if self.gamma is None or len(self.gamma) != self.p or any(g not in (0, 1) for g in self.gamma):
                raise InvalidPriorError(f"We expect a 0/1 inclusion vector of length {self.p} but got {self.gamma}")
            object.__setattr__(self, "gamma", tuple(int(g) for g in self.gamma))
        if self.kind == PriorKind.scaled_v and (self.c is None or not self.c > 0):
            raise InvalidPriorError(f"We expect c > 0 but got {self.c}")

    @classmethod
    def burden(cls, weights: Sequence[float], phi: float = 1.0, standardized: bool = True) -> "EffectPrior":
        return cls(PriorKind.burden, tuple(weights), phi=phi, standardized=standardized)

    @classmethod
    def skat(cls, weights: Sequence[float], phi: float = 1.0, standardized: bool = True) -> "EffectPrior":
        return cls(PriorKind.skat, tuple(weights), phi=phi, standardized=standardized)

    @classmethod
    def skato(
        cls, weights: Sequence[float], rho: float, phi: float = 1.0, standardized: bool = True
    ) -> "EffectPrior":
        return cls(PriorKind.skato, tuple(weights), phi=phi, standardized=standardized, rho=rho)

    @classmethod
    def cv_singleton(cls, p: int, index: int, phi: float = 1.0, standardized: bool = True) -> "EffectPrior":
        return cls(PriorKind.cv, (1.0,) * p, phi=phi, standardized=standardized, index=index)

    @classmethod
    def spike_slab(cls, gamma: Sequence[int], phi: float = 1.0, standardized: bool = True) -> "EffectPrior":
        return cls(PriorKind.spike_slab, (1.0,) * len(gamma), phi=phi, standardized=standardized, gamma=tuple(gamma))

    @classmethod
    def scaled_v(cls, p: int, c: float) -> "EffectPrior":
        return cls(PriorKind.scaled_v, (1.0,) * p, standardized=False, c=c)

    @property
    def p(self) -> int:
        return len(self.weights)

    @property
    def has_phi(self) -> bool:
        return self.kind != PriorKind.scaled_v

    def with_phi(self, phi: float) -> "EffectPrior":
        return replace(self, phi=phi)

    def normalized(self) -> "EffectPrior":
        """Weights rescaled to sum to one."""
        total = sum(self.weights)
        if total <= 0:
            raise InvalidPriorError("Cannot normalize all-zero weights")
        return replace(self, weights=tuple(w / total for w in self.weights))

    def shape_matrix(self) -> np.ndarray:
        """$W / \\phi^2$ before the $\\tau$ scaling."""
        w = np.asarray(self.weights)
        root = np.sqrt(w)
        if self.kind == PriorKind.burden:
            return np.outer(root, root)
        if self.kind == PriorKind.skat:
            return np.diag(w)
        if self.kind == PriorKind.skato:
            return (1 - self.rho) * np.diag(w) + self.rho * np.outer(root, root)
        if self.kind == PriorKind.cv:
            out = np.zeros((self.p, self.p))
            out[self.index, self.index] = 1.0
            return out
        if self.kind == PriorKind.spike_slab:
            return np.diag(np.asarray(self.gamma, dtype=float))
        raise InvalidPriorError("Prior scaled_v has no fixed shape, it is resolved against the effect covariance")

    def materialize(self, tau_check: float, v_check: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Prior covariance $W$ at the anchor $\\check\\tau$.

        Arguments:
            tau_check: inverse residual variance of the anchor, used by standardized priors
            v_check: effect covariance $\\check V$, needed by `scaled_v` only

        Returns:
            `p x p` PSD matrix
        """
        if tau_check <= 0:
            raise ValueError(f"We expect tau > 0 but got {tau_check}")
        if self.kind == PriorKind.scaled_v:
            if v_check is None:
                raise InvalidPriorError("Prior scaled_v needs the effect covariance to materialize")
            return self.c * np.asarray(v_check)
        W = self.phi**2 * self.shape_matrix()
        return W / tau_check if self.standardized else W

    def __str__(self):
        if self.kind == PriorKind.skato:
            return f"skato(rho={self.rho:g}, phi={self.phi:g})"
        if self.kind == PriorKind.cv:
            return f"cv(index={self.index}, phi={self.phi:g})"
        if self.kind == PriorKind.spike_slab:
            return f"spike_slab(gamma={''.join(str(g) for g in self.gamma)}, phi={self.phi:g})"
        if self.kind == PriorKind.scaled_v:
            return f"scaled_v(c={self.c:g})"
        return f"{self.kind.value}(phi={self.phi:g})"


@dataclass(frozen=True)
class P1Spec:
    """
    Prior inclusion probability of a SNP: either a point value or a uniform grid on $\\log_{10}p_1$.

    Usage:

    ```python
    from blmmstats.toolkit.priors import P1Spec

    spec = P1Spec.grid(-2.71, -1.40, n_points=17)
    assert len(spec.grid_values) == 17 and spec.grid_values[0] < spec.grid_values[-1] < 1
    ```
    """

    point: Optional[float] = None
    log10_bounds: Optional[Tuple[float, float]] = None
    n_points: int = 17

    def __post_init__(self):
        if (self.point is None) == (self.log10_bounds is None):
            raise InvalidPriorError("We expect either a point p1 or a log10 grid, exactly one of them")
        if self.point is not None and not 0 < self.point < 1:
            raise InvalidPriorError(f"We expect p1 in (0, 1) but got {self.point}")
        if self.log10_bounds is not None:
            a, b = self.log10_bounds
            if not a <= b < 0:
                raise InvalidPriorError(f"We expect log10 p1 bounds a <= b < 0 but got [{a}, {b}]")
            if self.n_points < 1 or (a < b and self.n_points < 2):
                raise InvalidPriorError(f"Grid needs at least 2 points but got {self.n_points}")

    @classmethod
    def grid(cls, a: float, b: float, n_points: int = 17) -> "P1Spec":
        return cls(log10_bounds=(float(a), float(b)), n_points=n_points)

    @property
    def grid_values(self) -> np.ndarray:
        if self.point is not None:
            return np.array([self.point])
        a, b = self.log10_bounds
        return 10.0 ** np.linspace(a, b, self.n_points) if a < b else np.array([10.0**a])

    def __str__(self):
        if self.point is not None:
            return f"point({self.point:.17g})"
        return f"grid({self.log10_bounds[0]:.17g}, {self.log10_bounds[1]:.17g}, {self.n_points})"
