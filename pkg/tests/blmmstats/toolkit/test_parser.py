import pytest
from pyparsing import ParseException

from src.blmmstats.toolkit.parser import Parser
from src.blmmstats.toolkit.priors import PriorKind
from src.blmmstats.toolkit.testing import check_docstring


@pytest.mark.parametrize(
    "text, kind",
    [
        ("burden", PriorKind.burden),
        ("skat(phi=0.4)", PriorKind.skat),
        ("skato(rho=0.3)", PriorKind.skato),
        ("cv(index=2)", PriorKind.cv),
        ("spike_slab(gamma=101)", PriorKind.spike_slab),
        ("scaled_v(c=1e-2)", PriorKind.scaled_v),
        ("  skat()  ", PriorKind.skat),
    ],
)
def test_parse_prior(text, kind):
    assert Parser.parse_prior(text).kind == kind


def test_prior_build():
    spec = Parser.parse_prior("skato(rho=0.3, phi=0.4)")
    prior = spec.build([0.2, 0.8])
    assert prior.kind == PriorKind.skato and prior.rho == 0.3 and prior.phi == 0.4 and prior.p == 2
    assert str(spec) == "skato(rho=0.3, phi=0.4)"
    assert Parser.parse_prior("spike_slab").build([1.0, 1.0, 1.0]).gamma == (1, 1, 1)
    assert Parser.parse_prior("cv(index=1)").build([1.0, 1.0]).index == 1
    assert Parser.parse_prior("scaled_v(c=2)").build([1.0]).c == 2.0


@pytest.mark.parametrize(
    "text",
    [
        "nonsense",
        "skat(rho=0.3)",
        "skato",
        "skat(phi=1, phi=2)",
        "skat(phi=abc)",
        "spike_slab(gamma=012)",
        "scaled_v",
        "skat(phi=1",
    ],
)
def test_parse_prior_errors(text):
    with pytest.raises(ParseException):
        Parser.parse_prior(text)


@pytest.mark.parametrize(
    "text, values",
    [
        ("0.002", [0.002]),
        ("point(0.002)", [0.002]),
        ("grid(-2, -1, 2)", [0.01, 0.1]),
    ],
)
def test_parse_p1(text, values):
    assert list(Parser.parse_p1(text).grid_values) == pytest.approx(values)


def test_parse_p1_default_grid():
    spec = Parser.parse_p1("grid(-2.71, -1.40)")
    assert spec.n_points == 17 and spec.log10_bounds == (-2.71, -1.40)


@pytest.mark.parametrize("text", ["1.5", "grid(-1, -2, 5)", "grid(-1, -2", "point()", "p"])
def test_parse_p1_errors(text):
    with pytest.raises(ParseException):
        Parser.parse_p1(text)


def test_parse_config():
    text = """
    # run settings
    seed = 7
    phi_grid = 0.1,0.4   # two scales
    prior = skato(rho=0.5)
    """
    assert Parser.parse_config(text) == {"seed": "7", "phi_grid": "0.1,0.4", "prior": "skato(rho=0.5)"}


@pytest.mark.parametrize("text", ["seed = 1\nseed = 2", "seed =", "= 3"])
def test_parse_config_errors(text):
    with pytest.raises(ParseException):
        Parser.parse_config(text)


def test_docstring():
    check_docstring(Parser.__doc__, indent=4)
