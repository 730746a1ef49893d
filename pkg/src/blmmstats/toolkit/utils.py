from typing import List, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

LN10 = np.log(10.0)


def log10_weighted_sum(log10_values: Sequence[float], weights: Sequence[float]) -> float:
    """
    $\\log_{10}\\sum_i w_i 10^{x_i}$ evaluated with `logsumexp`.

    Zero-weight terms are dropped first, a single remaining term is returned unchanged.
    """
    values = np.asarray(log10_values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    keep = weights > 0
    if not np.any(keep):
        raise ValueError("We need at least one positive weight")
    values, weights = values[keep], weights[keep]
    if values.size == 1 and weights[0] == 1.0:
        return float(values[0])
    return float(logsumexp(values * LN10, b=weights) / LN10)


def log10_mean(log10_values: Sequence[float]) -> float:
    values = np.asarray(log10_values, dtype=float)
    return log10_weighted_sum(values, np.full(values.size, 1.0 / values.size))


def validate_probabilities(values: Sequence[float], name: str, tol: float = 1e-12) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.size == 0 or np.any(~np.isfinite(values)) or np.any(values < 0):
        raise ValueError(f"We expect {name} to be non-negative but got {values}")
    if abs(values.sum() - 1.0) > tol:
        raise ValueError(f"We expect {name} to sum to one but they sum to {values.sum()}")
    return values


def empirical_maf(genotypes: np.ndarray, floor: Optional[float] = None) -> np.ndarray:
    """
    Folded minor allele frequency of dosage columns, floored at $1/(2n)$ so it stays inside $(0, 0.5]$.
    """
    genotypes = np.atleast_2d(np.asarray(genotypes, dtype=float))
    n = genotypes.shape[0]
    freq = genotypes.mean(axis=0) / 2.0
    maf = np.minimum(freq, 1.0 - freq)
    return np.clip(maf, floor if floor is not None else 1.0 / (2 * n), 0.5)


def spawn_generators(seed: Optional[int], n: int) -> List[np.random.Generator]:
    """Independent streams derived from one master seed, one per chain, set or replicate."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]
