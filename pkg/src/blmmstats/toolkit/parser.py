from typing import Dict, Optional, Sequence

from pyparsing import (
    Combine,
    Group,
    Keyword,
    Optional as Opt,
    ParseException,
    StringEnd,
    Suppress,
    Word,
    ZeroOrMore,
    alphanums,
    alphas,
    delimitedList,
    nums,
    oneOf,
    pythonStyleComment,
    restOfLine,
)

from .priors import EffectPrior, P1Spec, PriorKind

_ALLOWED_ARGUMENTS = {
    PriorKind.burden: {"phi"},
    PriorKind.skat: {"phi"},
    PriorKind.skato: {"rho", "phi"},
    PriorKind.cv: {"index", "phi"},
    PriorKind.spike_slab: {"gamma", "phi"},
    PriorKind.scaled_v: {"c"},
}


class PriorSpec:
    """
    Parsed prior expression, e.g. `skato(rho=0.3)`. It is a template, the per-SNP weights are only known
    once the SNP set is, see [`build`][blmmstats.toolkit.parser.PriorSpec.build].
    """

    def __init__(self, t):
        name = t[0]
        try:
            self.kind = PriorKind(name)
        except ValueError:
            raise ParseException(f"Unknown prior `{name}`, supported are {[k.value for k in PriorKind]}.")
        self.arguments: Dict[str, str] = {}
        for key, value in t[1:]:
            if key not in _ALLOWED_ARGUMENTS[self.kind]:
                raise ParseException(f"Prior `{name}` does not accept argument `{key}`.")
            if key in self.arguments:
                raise ParseException(f"Argument `{key}` given twice for prior `{name}`.")
            self.arguments[key] = value

        self.phi = self._float("phi")
        self.rho = self._float("rho")
        self.c = self._float("c")
        self.index = int(self._float("index")) if "index" in self.arguments else None
        gamma = self.arguments.get("gamma")
        if gamma is not None and (not gamma or set(gamma) - {"0", "1"}):
            raise ParseException(f"We expect gamma to be a 0/1 string but got `{gamma}`.")
        self.gamma = tuple(int(g) for g in gamma) if gamma is not None else None
        if self.kind == PriorKind.skato and self.rho is None:
            raise ParseException("Prior `skato` needs `rho`.")
        if self.kind == PriorKind.scaled_v and self.c is None:
            raise ParseException("Prior `scaled_v` needs `c`.")

    def _float(self, key: str) -> Optional[float]:
        if key not in self.arguments:
            return None
        try:
            return float(self.arguments[key])
        except ValueError:
            raise ParseException(f"Argument `{key}` must be a number but got `{self.arguments[key]}`.")

    def build(self, weights: Sequence[float]) -> EffectPrior:
        """
        Concrete [`EffectPrior`][blmmstats.toolkit.priors.EffectPrior] over `len(weights)` effects.
        """
        p = len(weights)
        phi = self.phi if self.phi is not None else 1.0
        if self.kind == PriorKind.burden:
            return EffectPrior.burden(weights, phi=phi)
        if self.kind == PriorKind.skat:
            return EffectPrior.skat(weights, phi=phi)
        if self.kind == PriorKind.skato:
            return EffectPrior.skato(weights, rho=self.rho, phi=phi)
        if self.kind == PriorKind.cv:
            return EffectPrior.cv_singleton(p, index=self.index or 0, phi=phi)
        if self.kind == PriorKind.spike_slab:
            return EffectPrior.spike_slab(self.gamma if self.gamma is not None else (1,) * p, phi=phi)
        return EffectPrior.scaled_v(p, c=self.c)

    def __str__(self):
        if not self.arguments:
            return self.kind.value
        return f"{self.kind.value}({', '.join(f'{k}={v}' for k, v in self.arguments.items())})"

    __repr__ = __str__


class ConfigEntry:
    def __init__(self, t):
        self.key = t[0]
        self.value = t[1].split("#")[0].strip()
        if not self.value:
            raise ParseException(f"Missing value for key `{self.key}`.")


def _number():
    return Combine(
        Opt(oneOf("+ -"))
        + Word(nums)
        + Opt("." + Opt(Word(nums)))
        + Opt(oneOf("e E") + Opt(oneOf("+ -")) + Word(nums))
    )


def _p1_point(t):
    return P1Spec(point=float(t[0]))


def _p1_grid(t):
    return P1Spec.grid(float(t[0]), float(t[1]), int(t[2]) if len(t) > 2 else 17)


class Parser:
    """
    Grammars of the textual configuration: prior expressions, inclusion probability specs and flat
    `key = value` config files.

    Usage:

    ```python
    from blmmstats.toolkit.parser import Parser

    spec = Parser.parse_prior("skato(rho=0.3, phi=0.4)")
    prior = spec.build([0.2, 0.3, 0.5])
    assert prior.rho == 0.3 and prior.phi == 0.4
    assert Parser.parse_p1("grid(-2.71, -1.40, 17)").n_points == 17
    assert Parser.parse_config("seed = 7  # fixed")["seed"] == "7"
    ```
    """

    _key = Word(alphas + "_")
    _value = Word(alphanums + ".-+_")
    _kwarg = Group(_key + Suppress("=") + _value)
    _prior = (Word(alphas + "_") + Opt(Suppress("(") + Opt(delimitedList(_kwarg)) + Suppress(")"))).setParseAction(
        PriorSpec
    ) + StringEnd()

    _p1 = (
        (_number().copy().setParseAction(_p1_point))
        | (Suppress(Keyword("point")) + Suppress("(") + _number() + Suppress(")")).setParseAction(_p1_point)
        | (
            Suppress(Keyword("grid"))
            + Suppress("(")
            + _number()
            + Suppress(",")
            + _number()
            + Opt(Suppress(",") + Word(nums))
            + Suppress(")")
        ).setParseAction(_p1_grid)
    ) + StringEnd()

    _config = ZeroOrMore(
        (Word(alphas, alphanums + "_-") + Suppress("=") + restOfLine).setParseAction(ConfigEntry)
    ) + StringEnd()
    _config.ignore(pythonStyleComment)

    @classmethod
    def parse_prior(cls, text: str) -> PriorSpec:
        return cls._prior.parseString(text.strip())[0]

    @classmethod
    def parse_p1(cls, text: str) -> P1Spec:
        """
        `0.002`, `point(0.002)` or `grid(a, b[, n])` with $\\log_{10}p_1 \\in [a, b]$.
        """
        try:
            return cls._p1.parseString(text.strip())[0]
        except ValueError as e:
            raise ParseException(f"Invalid inclusion probability `{text}` because of {e}")

    @classmethod
    def parse_config(cls, text: str) -> Dict[str, str]:
        """
        Flat `key = value` file content with `#` comments. Keys must be unique.
        """
        out = {}
        for entry in cls._config.parseString(text):
            if entry.key in out:
                raise ParseException(f"Key `{entry.key}` is given twice.")
            out[entry.key] = entry.value
        return out
