import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.blmmstats.toolkit.errors import InvalidPriorError
from src.blmmstats.toolkit.priors import EffectPrior, P1Spec, PriorKind, snp_weights
from src.blmmstats.toolkit.testing import check_docstring


def test_snp_weights_follow_beta_density():
    mafs = np.array([0.01, 0.1, 0.5])
    assert_allclose(snp_weights(mafs), 25 * (1 - mafs) ** 24, rtol=1e-10)
    assert snp_weights(mafs, normalize=True).sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("mafs", [[], [0.0], [0.6], [np.nan]])
def test_snp_weights_reject_invalid_maf(mafs):
    with pytest.raises(InvalidPriorError):
        snp_weights(mafs)


def test_shapes():
    w = np.array([0.25, 0.75])
    root = np.sqrt(w)
    assert_allclose(EffectPrior.burden(w).shape_matrix(), np.outer(root, root))
    assert_allclose(EffectPrior.skat(w).shape_matrix(), np.diag(w))
    assert_allclose(
        EffectPrior.skato(w, rho=0.3).shape_matrix(), 0.7 * np.diag(w) + 0.3 * np.outer(root, root)
    )
    assert_allclose(EffectPrior.cv_singleton(2, index=1).shape_matrix(), np.diag([0.0, 1.0]))
    assert_allclose(EffectPrior.spike_slab([1, 0]).shape_matrix(), np.diag([1.0, 0.0]))


def test_skato_end_points_are_skat_and_burden():
    w = [0.2, 0.3, 0.5]
    assert_allclose(EffectPrior.skato(w, rho=0.0).shape_matrix(), EffectPrior.skat(w).shape_matrix())
    assert_allclose(EffectPrior.skato(w, rho=1.0).shape_matrix(), EffectPrior.burden(w).shape_matrix())


def test_materialize_scales_by_phi_and_tau():
    prior = EffectPrior.skat([1.0, 2.0], phi=0.5)
    assert_allclose(prior.materialize(tau_check=4.0), np.diag([1.0, 2.0]) * 0.25 / 4.0)
    raw = EffectPrior.skat([1.0, 2.0], phi=0.5, standardized=False)
    assert_allclose(raw.materialize(tau_check=4.0), np.diag([1.0, 2.0]) * 0.25)
    with pytest.raises(ValueError):
        prior.materialize(tau_check=0.0)


def test_scaled_prior_resolves_against_effect_covariance():
    prior = EffectPrior.scaled_v(2, c=3.0)
    assert not prior.has_phi
    V = np.array([[1.0, 0.2], [0.2, 0.5]])
    assert_allclose(prior.materialize(1.0, V), 3.0 * V)
    with pytest.raises(InvalidPriorError):
        prior.materialize(1.0)
    with pytest.raises(InvalidPriorError):
        prior.shape_matrix()


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(kind=PriorKind.skat, weights=()),
        dict(kind=PriorKind.skat, weights=(-1.0,)),
        dict(kind=PriorKind.skat, weights=(1.0,), phi=0.0),
        dict(kind=PriorKind.skato, weights=(1.0,), rho=1.5),
        dict(kind=PriorKind.skato, weights=(1.0,)),
        dict(kind=PriorKind.cv, weights=(1.0, 1.0), index=2),
        dict(kind=PriorKind.spike_slab, weights=(1.0, 1.0), gamma=(1,)),
        dict(kind=PriorKind.spike_slab, weights=(1.0,), gamma=(2,)),
        dict(kind=PriorKind.scaled_v, weights=(1.0,), c=-1.0),
    ],
)
def test_invalid_prior(kwargs):
    with pytest.raises(InvalidPriorError):
        EffectPrior(**kwargs)


def test_normalized_and_with_phi():
    prior = EffectPrior.burden([1.0, 3.0]).normalized().with_phi(0.2)
    assert prior.weights == (0.25, 0.75)
    assert prior.phi == 0.2
    with pytest.raises(InvalidPriorError):
        EffectPrior.burden([0.0, 0.0]).normalized()


def test_prior_names():
    assert str(EffectPrior.skato([1.0], rho=0.5, phi=0.4)) == "skato(rho=0.5, phi=0.4)"
    assert str(EffectPrior.spike_slab([1, 0, 1])) == "spike_slab(gamma=101, phi=1)"
    assert str(EffectPrior.scaled_v(1, c=2.0)) == "scaled_v(c=2)"
    assert str(EffectPrior.burden([1.0])) == "burden(phi=1)"


def test_p1_grid():
    spec = P1Spec.grid(-2.0, -1.0, n_points=3)
    assert_allclose(spec.grid_values, [0.01, 10**-1.5, 0.1])
    assert_allclose(P1Spec(point=0.01).grid_values, [0.01])
    assert_allclose(P1Spec.grid(-2.0, -2.0, n_points=1).grid_values, [0.01])


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(),
        dict(point=0.1, log10_bounds=(-2.0, -1.0)),
        dict(point=1.0),
        dict(log10_bounds=(-1.0, -2.0)),
        dict(log10_bounds=(-2.0, 0.0)),
        dict(log10_bounds=(-2.0, -1.0), n_points=1),
    ],
)
def test_invalid_p1(kwargs):
    with pytest.raises(InvalidPriorError):
        P1Spec(**kwargs)


@pytest.mark.parametrize("cls", [EffectPrior, P1Spec])
def test_docstring(cls):
    check_docstring(cls.__doc__, indent=4)
