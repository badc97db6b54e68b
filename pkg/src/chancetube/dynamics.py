"""System dynamics as expression trees, Taylor polynomialization and feedback.

Expressions admit constants, variables, sums, products, nonnegative integer
powers and the two primitives ``sin``/``cos``.  Their derivatives cycle, so
Taylor expansion to any order stays inside truncated-series arithmetic.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .polynomial import Monomial, Polynomial


class ParseError(ValueError):
    def __init__(self, message: str, text: str = "", position: int = 0):
        self.text = text
        self.position = position
        self.message = message
        super().__init__(f"{message} at column {position + 1}: {text!r}")


# ---------------------------------------------------------------------------
# Expression tree


class Expression:
    def eval(self, point: Mapping[str, float | np.ndarray]):
        raise NotImplementedError

    def variables(self) -> set[str]:
        raise NotImplementedError

    def is_polynomial(self) -> bool:
        raise NotImplementedError

    def to_polynomial(self) -> Polynomial:
        raise NotImplementedError

    def _series(self, center: Mapping[str, float], degree: int) -> Polynomial:
        """Truncated Taylor series in the shifted variables ``v - center[v]``."""
        raise NotImplementedError

    def __add__(self, other):
        return Sum((self, _wrap(other)))

    def __radd__(self, other):
        return Sum((_wrap(other), self))

    def __mul__(self, other):
        return Product((self, _wrap(other)))

    def __rmul__(self, other):
        return Product((_wrap(other), self))

    def __sub__(self, other):
        return Sum((self, Product((Const(-1.0), _wrap(other)))))

    def __neg__(self):
        return Product((Const(-1.0), self))


def _wrap(x) -> Expression:
    if isinstance(x, Expression):
        return x
    if isinstance(x, Polynomial):
        return from_polynomial(x)
    return Const(float(x))


@dataclass(frozen=True)
class Const(Expression):
    value: float

    def eval(self, point):
        return self.value

    def variables(self):
        return set()

    def is_polynomial(self):
        return True

    def to_polynomial(self):
        return Polynomial.constant(self.value)

    def _series(self, center, degree):
        return Polynomial.constant(self.value)

    def __str__(self):
        return repr(self.value)


@dataclass(frozen=True)
class Var(Expression):
    name: str

    def eval(self, point):
        try:
            return point[self.name]
        except KeyError:
            raise KeyError(f"variable {self.name!r} is not bound") from None

    def variables(self):
        return {self.name}

    def is_polynomial(self):
        return True

    def to_polynomial(self):
        return Polynomial.var(self.name)

    def _series(self, center, degree):
        p = Polynomial.constant(center.get(self.name, 0.0))
        if degree >= 1:
            p = p + Polynomial.var(self.name)
        return p

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Sum(Expression):
    children: tuple[Expression, ...]

    def eval(self, point):
        total = 0.0
        for c in self.children:
            total = total + c.eval(point)
        return total

    def variables(self):
        return set().union(*(c.variables() for c in self.children))

    def is_polynomial(self):
        return all(c.is_polynomial() for c in self.children)

    def to_polynomial(self):
        out = Polynomial.zero()
        for c in self.children:
            out = out + c.to_polynomial()
        return out

    def _series(self, center, degree):
        out = Polynomial.zero()
        for c in self.children:
            out = out + c._series(center, degree)
        return out

    def __str__(self):
        return "(" + " + ".join(str(c) for c in self.children) + ")"


@dataclass(frozen=True)
class Product(Expression):
    children: tuple[Expression, ...]

    def eval(self, point):
        total = 1.0
        for c in self.children:
            total = total * c.eval(point)
        return total

    def variables(self):
        return set().union(*(c.variables() for c in self.children))

    def is_polynomial(self):
        return all(c.is_polynomial() for c in self.children)

    def to_polynomial(self):
        out = Polynomial.constant(1.0)
        for c in self.children:
            out = out * c.to_polynomial()
        return out

    def _series(self, center, degree):
        out = Polynomial.constant(1.0)
        for c in self.children:
            out = (out * c._series(center, degree)).truncate(degree)
        return out

    def __str__(self):
        return "*".join(str(c) for c in self.children)


@dataclass(frozen=True)
class Power(Expression):
    base: Expression
    exponent: int

    def __post_init__(self):
        if self.exponent < 0 or int(self.exponent) != self.exponent:
            raise ValueError("powers must be nonnegative integers")

    def eval(self, point):
        return self.base.eval(point) ** self.exponent

    def variables(self):
        return self.base.variables()

    def is_polynomial(self):
        return self.base.is_polynomial()

    def to_polynomial(self):
        return self.base.to_polynomial() ** self.exponent

    def _series(self, center, degree):
        b = self.base._series(center, degree)
        out = Polynomial.constant(1.0)
        for _ in range(self.exponent):
            out = (out * b).truncate(degree)
        return out

    def __str__(self):
        return f"{self.base}^{self.exponent}"


def _trig_series(arg: Polynomial, degree: int) -> tuple[Polynomial, Polynomial]:
    """(sin, cos) of a truncated series, split as constant plus nilpotent part."""
    a0 = arg.constant_term()
    rest = arg - a0
    s = Polynomial.zero()
    c = Polynomial.zero()
    term = Polynomial.constant(1.0)
    for k in range(degree + 1):
        coef = 1.0 / math.factorial(k)
        sign = (-1) ** (k // 2)
        if k % 2:
            s = s + term * (sign * coef)
        else:
            c = c + term * (sign * coef)
        term = (term * rest).truncate(degree)
        if term.is_zero():
            break
    sin0, cos0 = math.sin(a0), math.cos(a0)
    return (s * cos0 + c * sin0).truncate(degree), (c * cos0 - s * sin0).truncate(degree)


@dataclass(frozen=True)
class Sin(Expression):
    arg: Expression

    def eval(self, point):
        return np.sin(self.arg.eval(point))

    def variables(self):
        return self.arg.variables()

    def is_polynomial(self):
        return False

    def to_polynomial(self):
        raise TypeError("sin(...) is not a polynomial; use taylor()")

    def _series(self, center, degree):
        return _trig_series(self.arg._series(center, degree), degree)[0]

    def __str__(self):
        return f"sin({self.arg})"


@dataclass(frozen=True)
class Cos(Expression):
    arg: Expression

    def eval(self, point):
        return np.cos(self.arg.eval(point))

    def variables(self):
        return self.arg.variables()

    def is_polynomial(self):
        return False

    def to_polynomial(self):
        raise TypeError("cos(...) is not a polynomial; use taylor()")

    def _series(self, center, degree):
        return _trig_series(self.arg._series(center, degree), degree)[1]

    def __str__(self):
        return f"cos({self.arg})"


def from_polynomial(p: Polynomial) -> Expression:
    terms = []
    for m, c in p.items():
        factors: list[Expression] = [Const(c)]
        for v, e in m.exponents.items():
            factors.append(Var(v) if e == 1 else Power(Var(v), e))
        terms.append(Product(tuple(factors)))
    return Sum(tuple(terms)) if terms else Const(0.0)


def taylor(e: Expression, center: Mapping[str, float], degree: int) -> Polynomial:
    """Taylor polynomial of ``e`` about ``center`` truncated to total ``degree``.

    Variables missing from ``center`` are expanded about 0.  The result is
    expressed in the original (unshifted) variables.
    """
    if degree < 0:
        raise ValueError("Taylor degree must be nonnegative")
    shifted = e._series(center, degree)
    binds = {v: Polynomial.var(v) - center.get(v, 0.0) for v in e.variables() if center.get(v, 0.0)}
    return shifted.substitute(binds) if binds else shifted


# ---------------------------------------------------------------------------
# Parser.  Grammar:
#   expr   := ['+'|'-'] term (('+'|'-') term)*
#   term   := factor ('*' factor)*
#   factor := atom ('^' INT)?
#   atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*^()]))"
)
_FUNCTIONS = {"sin": Sin, "cos": Cos}


class _Parser:
    def __init__(self, text: str, allow_functions: bool = True):
        self.text = text
        self.allow_functions = allow_functions
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            m = _TOKEN.match(text, pos)
            if not m or m.end() == pos:
                bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
                raise ParseError(f"unexpected character {text[bad]!r}", text, bad)
            kind = m.lastgroup
            start = m.start(kind)
            self.tokens.append((kind, m.group(kind), start))
            pos = m.end()
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else ("end", "", len(self.text))

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value:
            raise ParseError(f"expected {value!r}, found {val or 'end of input'!r}", self.text, pos)

    def parse(self) -> Expression:
        if not self.tokens:
            raise ParseError("empty expression", self.text, 0)
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", self.text, pos)
        return e

    def expr(self) -> Expression:
        terms = []
        kind, val, pos = self.peek()
        sign = 1.0
        if val in "+-" and kind == "op":
            self.take()
            sign = -1.0 if val == "-" else 1.0
        t = self.term()
        terms.append(t if sign > 0 else Product((Const(-1.0), t)))
        while True:
            kind, val, pos = self.peek()
            if kind == "op" and val in "+-":
                self.take()
                t = self.term()
                terms.append(t if val == "+" else Product((Const(-1.0), t)))
            else:
                break
        return terms[0] if len(terms) == 1 else Sum(tuple(terms))

    def term(self) -> Expression:
        factors = [self.factor()]
        while self.peek()[1] == "*" and self.peek()[0] == "op":
            self.take()
            factors.append(self.factor())
        return factors[0] if len(factors) == 1 else Product(tuple(factors))

    def factor(self) -> Expression:
        base = self.atom()
        if self.peek()[1] == "^" and self.peek()[0] == "op":
            self.take()
            kind, val, pos = self.take()
            if kind != "num" or not val.isdigit():
                raise ParseError("exponent must be a nonnegative integer", self.text, pos)
            return Power(base, int(val))
        return base

    def atom(self) -> Expression:
        kind, val, pos = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                if val not in _FUNCTIONS or not self.allow_functions:
                    raise ParseError(f"unknown function {val!r}", self.text, pos)
                self.take()
                inner = self.expr()
                self.expect(")")
                return _FUNCTIONS[val](inner)
            if val in _FUNCTIONS:
                raise ParseError(f"{val} requires an argument", self.text, pos)
            return Var(val)
        if val == "(":
            inner = self.expr()
            self.expect(")")
            return inner
        raise ParseError(f"unexpected {val or 'end of input'!r}", self.text, pos)


def parse_expression(text: str) -> Expression:
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# System model and feedback law


@dataclass(frozen=True)
class SystemModel:
    state_vars: tuple[str, ...]
    input_vars: tuple[str, ...]
    noise_vars: tuple[str, ...]
    update: tuple[Expression, ...]
    dt: float = 1.0

    def __post_init__(self):
        if len(self.update) != len(self.state_vars):
            raise ValueError(
                f"{len(self.state_vars)} states but {len(self.update)} update expressions"
            )
        names = self.state_vars + self.input_vars + self.noise_vars
        if len(set(names)) != len(names):
            raise ValueError("state, input and noise variable names must be distinct")
        declared = set(names)
        for x, e in zip(self.state_vars, self.update):
            extra = e.variables() - declared
            if extra:
                raise ValueError(f"update of {x} uses undeclared variables {sorted(extra)}")

    @property
    def n(self) -> int:
        return len(self.state_vars)

    def polynomialize(self, center: Mapping[str, float], degree: int) -> list[Polynomial]:
        """Polynomial surrogate of the update map; polynomial updates pass through untouched."""
        return [e.to_polynomial() if e.is_polynomial() else taylor(e, center, degree)
                for e in self.update]

    def step(self, point: Mapping[str, np.ndarray]) -> list[np.ndarray]:
        return [e.eval(point) for e in self.update]


@dataclass(frozen=True)
class FeedbackTerm:
    gain: str
    monomial: Monomial  # over state names, applied to the error state
    lower: float
    upper: float


@dataclass(frozen=True)
class FeedbackLaw:
    """``u_i = u*_i + sum_a g_{a,i} (x - x*)^a`` with boxed gains and inputs."""

    inputs: tuple[str, ...]
    terms: tuple[tuple[FeedbackTerm, ...], ...]
    input_bounds: tuple[tuple[float | None, float | None], ...] = field(default=())

    def __post_init__(self):
        if len(self.terms) != len(self.inputs):
            raise ValueError("one term list per input required")
        bounds = self.input_bounds or tuple((None, None) for _ in self.inputs)
        if len(bounds) != len(self.inputs):
            raise ValueError("one input bound pair per input required")
        object.__setattr__(self, "input_bounds", tuple(bounds))
        seen: set[str] = set()
        for ts in self.terms:
            monos = [t.monomial for t in ts]
            if len(set(monos)) != len(monos):
                raise ValueError("feedback basis monomials must be distinct per input")
            for t in ts:
                if t.gain in seen:
                    raise ValueError(f"gain {t.gain!r} used twice")
                seen.add(t.gain)
                if not (math.isfinite(t.lower) and math.isfinite(t.upper)) or t.lower > t.upper:
                    raise ValueError(f"gain {t.gain!r} needs finite bounds with lower <= upper")
        for lo, hi in bounds:
            if lo is not None and hi is not None and lo > hi:
                raise ValueError("input bounds need lower <= upper")

    @property
    def gains(self) -> tuple[str, ...]:
        return tuple(t.gain for ts in self.terms for t in ts)

    def gain_bounds(self) -> dict[str, tuple[float, float]]:
        return {t.gain: (t.lower, t.upper) for ts in self.terms for t in ts}


def _error_monomial(mono: Monomial, x_nom: Mapping[str, float]) -> Polynomial:
    out = Polynomial.constant(1.0)
    for v, e in mono.exponents.items():
        out = out * (Polynomial.var(v) - x_nom.get(v, 0.0)) ** e
    return out


def input_polynomials(law: FeedbackLaw, u_nom: Sequence[float], x_nom: Mapping[str, float],
                      gains: Mapping[str, float] | None = None) -> list[Polynomial]:
    """``u_i(k)`` as polynomials in states and gain symbols (or numeric ``gains``)."""
    if len(u_nom) != len(law.inputs):
        raise ValueError(f"expected {len(law.inputs)} nominal inputs, got {len(u_nom)}")
    out = []
    for ts, u0 in zip(law.terms, u_nom):
        p = Polynomial.constant(u0)
        for t in ts:
            g = Polynomial.var(t.gain) if gains is None else gains[t.gain]
            p = p + _error_monomial(t.monomial, x_nom) * g
        out.append(p)
    return out


def closed_loop_step(model: SystemModel, update: Sequence[Polynomial], law: FeedbackLaw,
                     x_nom: Mapping[str, float], u_nom: Sequence[float],
                     gains: Mapping[str, float] | None = None) -> list[Polynomial]:
    """Substitute the feedback law into polynomial updates; result is x(k+1) symbolically."""
    if len(update) != model.n:
        raise ValueError(f"expected {model.n} update polynomials, got {len(update)}")
    if tuple(law.inputs) != tuple(model.input_vars):
        raise ValueError(f"feedback inputs {law.inputs} do not match model inputs {model.input_vars}")
    us = input_polynomials(law, u_nom, x_nom, gains)
    binds = dict(zip(model.input_vars, us))
    return [p.substitute(binds) for p in update]
