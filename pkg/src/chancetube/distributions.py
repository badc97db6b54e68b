"""Closed-form raw moments and samplers for the supported uncertainty families."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

KINDS = ("normal", "uniform", "tri", "beta", "dirac")


@dataclass(frozen=True)
class DistributionSpec:
    """One scalar distribution.

    ``normal(mean, std)``, ``uniform(a, b)``, ``tri(peak)`` on [0, 1],
    ``beta(alpha, beta)`` on [0, 1], ``dirac(value)``.
    """

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        k, p = self.kind, self.params
        arity = {"normal": 2, "uniform": 2, "tri": 1, "beta": 2, "dirac": 1}
        if k not in arity:
            raise ValueError(f"unknown distribution kind {k!r}; expected one of {KINDS}")
        if len(p) != arity[k]:
            raise ValueError(f"{k} takes {arity[k]} parameter(s), got {len(p)}")
        if k == "normal" and not p[1] > 0:
            raise ValueError("normal std must be positive")
        if k == "uniform" and not p[0] < p[1]:
            raise ValueError("uniform needs a < b")
        if k == "tri" and not 0.0 <= p[0] <= 1.0:
            raise ValueError("tri peak must lie in [0, 1]")
        if k == "beta" and not (p[0] > 0 and p[1] > 0):
            raise ValueError("beta parameters must be positive")

    def __str__(self):
        return f"{self.kind}({','.join(f'{v:g}' for v in self.params)})"

    @property
    def mean(self) -> float:
        return float(moments(self, 1)[1])

    @property
    def std(self) -> float:
        m = moments(self, 2)
        return float(np.sqrt(max(m[2] - m[1] ** 2, 0.0)))

    def moments(self, up_to: int) -> np.ndarray:
        return moments(self, up_to)

    def sample(self, rng: np.random.Generator, size=None):
        return sample(self, rng, size)


def normal(mean: float, std: float) -> DistributionSpec:
    return DistributionSpec("normal", (mean, std))


def uniform(a: float, b: float) -> DistributionSpec:
    return DistributionSpec("uniform", (a, b))


def tri(peak: float) -> DistributionSpec:
    return DistributionSpec("tri", (peak,))


def beta(a: float, b: float) -> DistributionSpec:
    return DistributionSpec("beta", (a, b))


def dirac(value: float) -> DistributionSpec:
    return DistributionSpec("dirac", (value,))


_SPEC_RE = re.compile(r"^\s*([A-Za-z]+)\s*\(([^()]*)\)\s*$")


def parse_distribution(text: str) -> DistributionSpec:
    """Parse ``normal(0,0.2)``, ``uniform(-0.07,0.07)``, ``tri(0)``, ``beta(4,4)``, ``dirac(0)``."""
    m = _SPEC_RE.match(str(text))
    if not m:
        raise ValueError(f"cannot parse distribution {text!r}")
    kind = m.group(1).lower()
    kind = {"triangular": "tri", "n": "normal", "u": "uniform"}.get(kind, kind)
    try:
        params = tuple(float(s) for s in m.group(2).split(",") if s.strip())
    except ValueError:
        raise ValueError(f"non-numeric parameter in {text!r}") from None
    return DistributionSpec(kind, params)


@lru_cache(maxsize=4096)
def _moments_cached(spec: DistributionSpec, up_to: int) -> tuple[float, ...]:
    k, p = spec.kind, spec.params
    y = np.empty(up_to + 1)
    y[0] = 1.0
    if k == "normal":
        mu, sigma = p
        if up_to >= 1:
            y[1] = mu
        for a in range(2, up_to + 1):
            y[a] = mu * y[a - 1] + (a - 1) * sigma**2 * y[a - 2]
    elif k == "uniform":
        a, b = p
        for i in range(1, up_to + 1):
            y[i] = (b ** (i + 1) - a ** (i + 1)) / ((b - a) * (i + 1))
    elif k == "tri":
        (a,) = p
        for i in range(1, up_to + 1):
            if a == 1.0:
                y[i] = 2.0 / (i + 2)
            else:
                y[i] = 2.0 * (1.0 - a ** (i + 1)) / ((i + 1) * (i + 2) * (1.0 - a))
    elif k == "beta":
        al, be = p
        for i in range(1, up_to + 1):
            y[i] = (al + i - 1) / (al + be + i - 1) * y[i - 1]
    elif k == "dirac":
        (c,) = p
        for i in range(1, up_to + 1):
            y[i] = c**i
    return tuple(y)


def moments(spec: DistributionSpec, up_to: int) -> np.ndarray:
    """Raw moments ``[E x^0, ..., E x^up_to]``."""
    if up_to < 0:
        raise ValueError("up_to must be nonnegative")
    return np.array(_moments_cached(spec, int(up_to)))


def sample(spec: DistributionSpec, rng: np.random.Generator, size=None):
    k, p = spec.kind, spec.params
    if k == "normal":
        return rng.normal(p[0], p[1], size)
    if k == "uniform":
        return rng.uniform(p[0], p[1], size)
    if k == "tri":
        return rng.triangular(0.0, p[0], 1.0, size)
    if k == "beta":
        return rng.beta(p[0], p[1], size)
    return np.full(size, p[0]) if size is not None else p[0]


def product_moment(specs: Sequence[DistributionSpec], multi_index: Sequence[int]) -> float:
    """``E[prod_i z_i^{a_i}]`` for independent components."""
    if len(specs) != len(multi_index):
        raise ValueError("one exponent per distribution required")
    out = 1.0
    for s, a in zip(specs, multi_index):
        if a:
            out *= moments(s, a)[a]
    return out


@dataclass
class UncertaintyModel:
    """Independent initial-state and per-step noise distributions."""

    initial: dict[str, DistributionSpec]
    noise: dict[str, DistributionSpec]
    noise_overrides: dict[int, dict[str, DistributionSpec]] = field(default_factory=dict)

    def noise_at(self, k: int) -> dict[str, DistributionSpec]:
        out = dict(self.noise)
        out.update(self.noise_overrides.get(k, {}))
        return out

    def initial_specs(self, states: Sequence[str]) -> list[DistributionSpec]:
        missing = [s for s in states if s not in self.initial]
        if missing:
            raise KeyError(f"no initial distribution for {missing}")
        return [self.initial[s] for s in states]

    @classmethod
    def from_strings(cls, initial: Mapping[str, str], noise: Mapping[str, str]) -> "UncertaintyModel":
        return cls({k: parse_distribution(v) for k, v in initial.items()},
                   {k: parse_distribution(v) for k, v in noise.items()})
