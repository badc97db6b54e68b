"""Sparse multivariate polynomials over named variables.

Monomials are keyed by variable name, coefficients are doubles, and terms
whose magnitude falls below ``ZERO_TOL`` are pruned on construction.

The canonical basis order everywhere is graded lexicographic: total degree
first, then lexicographic in a :class:`VariableOrder` with the first variable
heaviest, so for ``(x1, x2)`` and degree 2 the basis reads
``1, x1, x2, x1^2, x1*x2, x2^2``.
"""

from __future__ import annotations

import math
from functools import lru_cache
from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence

import numpy as np

ZERO_TOL = 1e-12


class UnboundVariableError(KeyError):
    pass


class Monomial:
    """Product of variables raised to positive integer powers."""

    __slots__ = ("_items", "_degree", "_hash")

    def __init__(self, exponents: Mapping[str, int] | Iterable[tuple[str, int]] = ()):
        items = exponents.items() if isinstance(exponents, Mapping) else exponents
        merged: dict[str, int] = {}
        for var, e in items:
            if e < 0 or int(e) != e:
                raise ValueError(f"exponent of {var} must be a nonnegative integer, got {e}")
            if e:
                merged[var] = merged.get(var, 0) + int(e)
        self._items = tuple(sorted(merged.items()))
        self._degree = sum(merged.values())
        self._hash = hash(self._items)

    @classmethod
    def var(cls, name: str, power: int = 1) -> "Monomial":
        return cls(((name, power),))

    @property
    def exponents(self) -> dict[str, int]:
        return dict(self._items)

    @property
    def degree(self) -> int:
        return self._degree

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(v for v, _ in self._items)

    def exponent(self, var: str) -> int:
        for v, e in self._items:
            if v == var:
                return e
        return 0

    def degree_in(self, variables: Iterable[str]) -> int:
        vs = set(variables)
        return sum(e for v, e in self._items if v in vs)

    def as_tuple(self, order: Sequence[str]) -> tuple[int, ...]:
        """Exponent vector aligned with ``order``; raises if a variable is missing."""
        exps = dict(self._items)
        out = tuple(exps.pop(v, 0) for v in order)
        if exps:
            raise ValueError(f"variables {sorted(exps)} not in order {tuple(order)}")
        return out

    @classmethod
    def from_tuple(cls, order: Sequence[str], exps: Sequence[int]) -> "Monomial":
        return cls(zip(order, exps))

    def __mul__(self, other: "Monomial") -> "Monomial":
        return Monomial(self._items + other._items)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Monomial) and self._items == other._items

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        return f"Monomial({self})"

    def __str__(self) -> str:
        if not self._items:
            return "1"
        return "*".join(v if e == 1 else f"{v}^{e}" for v, e in self._items)


ONE = Monomial()


class VariableOrder(tuple):
    """Ordered, duplicate-free tuple of variable names."""

    def __new__(cls, names: Iterable[str] = ()):
        names = tuple(names)
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate variables in order {names}")
        return super().__new__(cls, names)

    def index(self, name: str) -> int:  # type: ignore[override]
        try:
            return super().index(name)
        except ValueError:
            raise KeyError(f"variable {name!r} not in order {tuple(self)}") from None

    def rank(self, mono: Monomial) -> tuple:
        """Sort key placing ``mono`` in graded-lex position."""
        exps = mono.as_tuple(self)
        return (sum(exps), tuple(-e for e in exps))


def _grlex_key(exps: tuple[int, ...]) -> tuple:
    return (sum(exps), tuple(-e for e in exps))


@lru_cache(maxsize=None)
def exponent_basis(n: int, d: int) -> tuple[tuple[int, ...], ...]:
    """All exponent vectors of length ``n`` with total degree <= d, graded-lex."""
    if d < 0:
        raise ValueError("degree must be nonnegative")
    out = []
    for deg in range(d + 1):
        block = []
        for combo in combinations_with_replacement(range(n), deg):
            e = [0] * n
            for i in combo:
                e[i] += 1
            block.append(tuple(e))
        # combinations_with_replacement emits first-variable-heavy first already,
        # but sort to make the contract explicit
        block.sort(key=_grlex_key)
        out.extend(block)
    return tuple(out)


@lru_cache(maxsize=None)
def exponent_index(n: int, d: int) -> dict[tuple[int, ...], int]:
    return {e: i for i, e in enumerate(exponent_basis(n, d))}


def basis_size(n: int, d: int) -> int:
    return math.comb(n + d, d)


def monomial_basis(variables: Sequence[str], d: int) -> list[Monomial]:
    order = VariableOrder(variables)
    return [Monomial.from_tuple(order, e) for e in exponent_basis(len(order), d)]


class Polynomial:
    """Immutable sparse polynomial ``{Monomial: coefficient}``."""

    __slots__ = ("_terms",)

    def __init__(self, terms: Mapping[Monomial, float] | None = None, *, tol: float = ZERO_TOL):
        clean: dict[Monomial, float] = {}
        if terms:
            for m, c in terms.items():
                c = float(c)
                if abs(c) >= tol and c == c:
                    clean[m] = c
                elif c != c:
                    raise ValueError("NaN coefficient")
        self._terms = clean

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, c: float) -> "Polynomial":
        return cls({ONE: c})

    @classmethod
    def var(cls, name: str) -> "Polynomial":
        return cls({Monomial.var(name): 1.0})

    @classmethod
    def zero(cls) -> "Polynomial":
        return cls()

    @classmethod
    def _raw(cls, terms: dict[Monomial, float], tol: float = ZERO_TOL) -> "Polynomial":
        p = cls.__new__(cls)
        p._terms = {m: c for m, c in terms.items() if abs(c) >= tol}
        return p

    # -- inspection -------------------------------------------------------
    @property
    def terms(self) -> dict[Monomial, float]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self):
        return iter(self._terms)

    def coefficient(self, mono: Monomial | Mapping[str, int]) -> float:
        if not isinstance(mono, Monomial):
            mono = Monomial(mono)
        return self._terms.get(mono, 0.0)

    @property
    def variables(self) -> tuple[str, ...]:
        seen: set[str] = set()
        for m in self._terms:
            seen.update(m.variables)
        return tuple(sorted(seen))

    @property
    def degree(self) -> int:
        """Total degree; the zero polynomial has degree 0 by convention."""
        return max((m.degree for m in self._terms), default=0)

    def degree_in(self, variables: Iterable[str]) -> int:
        vs = tuple(variables)
        return max((m.degree_in(vs) for m in self._terms), default=0)

    def is_zero(self) -> bool:
        return not self._terms

    def constant_term(self) -> float:
        return self._terms.get(ONE, 0.0)

    # -- arithmetic -------------------------------------------------------
    @staticmethod
    def _coerce(other) -> "Polynomial":
        if isinstance(other, Polynomial):
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(float(other))
        return NotImplemented

    def __add__(self, other) -> "Polynomial":
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial._raw(out)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial._raw({m: -c for m, c in self._terms.items()})

    def __sub__(self, other) -> "Polynomial":
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other) -> "Polynomial":
        return (-self) + other

    def __mul__(self, other) -> "Polynomial":
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial._raw({m: c * other for m, c in self._terms.items()})
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict[Monomial, float] = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = m1 * m2
                out[m] = out.get(m, 0.0) + c1 * c2
        return Polynomial._raw(out)

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> "Polynomial":
        return self * (1.0 / other)

    def __pow__(self, n: int) -> "Polynomial":
        if int(n) != n or n < 0:
            raise ValueError("polynomial powers must be nonnegative integers")
        result = Polynomial.constant(1.0)
        base = self
        n = int(n)
        while n:
            if n & 1:
                result = result * base
            n >>= 1
            if n:
                base = base * base
        return result

    def truncate(self, degree: int, variables: Iterable[str] | None = None) -> "Polynomial":
        """Drop terms of (total, or partial in ``variables``) degree above ``degree``."""
        if variables is None:
            return Polynomial._raw({m: c for m, c in self._terms.items() if m.degree <= degree})
        vs = tuple(variables)
        return Polynomial._raw({m: c for m, c in self._terms.items() if m.degree_in(vs) <= degree})

    def prune(self, tol: float) -> "Polynomial":
        return Polynomial._raw(dict(self._terms), tol=tol)

    # -- composition and evaluation --------------------------------------
    def substitute(self, bindings: Mapping[str, "Polynomial | float"]) -> "Polynomial":
        """Compose: replace each bound variable by a polynomial; others pass through."""
        binds = {k: self._coerce(v) for k, v in bindings.items()}
        power_cache: dict[tuple[str, int], Polynomial] = {}

        def power(var: str, e: int) -> Polynomial:
            key = (var, e)
            if key not in power_cache:
                if e == 1:
                    power_cache[key] = binds[var]
                else:
                    half = power(var, e // 2)
                    p = half * half
                    if e % 2:
                        p = p * binds[var]
                    power_cache[key] = p
            return power_cache[key]

        out: dict[Monomial, float] = {}
        for mono, c in self._terms.items():
            kept = []
            factor: Polynomial | None = None
            for v, e in mono.exponents.items():
                if v in binds:
                    pv = power(v, e)
                    factor = pv if factor is None else factor * pv
                else:
                    kept.append((v, e))
            head = Monomial(kept)
            if factor is None:
                out[head] = out.get(head, 0.0) + c
            else:
                for m2, c2 in factor._terms.items():
                    m = head * m2
                    out[m] = out.get(m, 0.0) + c * c2
        return Polynomial._raw(out)

    def rename(self, mapping: Mapping[str, str]) -> "Polynomial":
        out: dict[Monomial, float] = {}
        for m, c in self._terms.items():
            nm = Monomial((mapping.get(v, v), e) for v, e in m.exponents.items())
            out[nm] = out.get(nm, 0.0) + c
        return Polynomial._raw(out)

    def eval(self, point: Mapping[str, float]):
        """Evaluate at a point; values may be scalars or equally shaped arrays."""
        total = 0.0
        for m, c in self._terms.items():
            term = c
            for v, e in m.exponents.items():
                try:
                    term = term * point[v] ** e
                except KeyError:
                    raise UnboundVariableError(f"variable {v!r} is not bound") from None
            total = total + term
        return total

    __call__ = eval

    # -- comparison and display ------------------------------------------
    def almost_equal(self, other: "Polynomial | float", tol: float = 1e-9) -> bool:
        diff = self - self._coerce(other)
        return all(abs(c) <= tol for c in diff._terms.values())

    def __eq__(self, other: object) -> bool:
        if isinstance(other, (int, float)):
            other = Polynomial.constant(other)
        return isinstance(other, Polynomial) and self._terms == other._terms

    def __hash__(self) -> int:
        return hash(frozenset(self._terms.items()))

    def sorted_terms(self, order: Sequence[str] | None = None) -> list[tuple[Monomial, float]]:
        order = VariableOrder(order if order is not None else self.variables)
        return sorted(self._terms.items(), key=lambda mc: order.rank(mc[0]))

    def __repr__(self) -> str:
        return f"Polynomial({self})"

    def __str__(self) -> str:
        if not self._terms:
            return "0"
        parts = []
        for m, c in self.sorted_terms():
            if m == ONE:
                body = f"{abs(c):.12g}"
            elif abs(abs(c) - 1.0) < 1e-15:
                body = str(m)
            else:
                body = f"{abs(c):.12g}*{m}"
            sign = "-" if c < 0 else "+"
            parts.append((sign, body))
        first_sign, first = parts[0]
        text = ("-" if first_sign == "-" else "") + first
        for sign, body in parts[1:]:
            text += f" {sign} {body}"
        return text


def parse_polynomial(text: str) -> Polynomial:
    """Parse a literal such as ``3.5*x1^2*w0 - 0.1`` (no sin/cos)."""
    from .dynamics import ParseError, parse_expression

    expr = parse_expression(text)
    if not expr.is_polynomial():
        raise ParseError("sin/cos are not allowed in a polynomial literal", text, 0)
    return expr.to_polynomial()


def poly(text: str) -> Polynomial:
    return parse_polynomial(text)


# ---------------------------------------------------------------------------
# Array form used by the moment-propagation hot loops.  Exponents live in a
# (terms, nvars) integer array over a fixed variable order.

class PolyArray:
    __slots__ = ("order", "exps", "coefs")

    def __init__(self, order: Sequence[str], exps: np.ndarray, coefs: np.ndarray):
        self.order = tuple(order)
        self.exps = np.asarray(exps, dtype=np.int64).reshape(-1, len(self.order))
        self.coefs = np.asarray(coefs, dtype=float)

    @classmethod
    def from_polynomial(cls, p: Polynomial, order: Sequence[str]) -> "PolyArray":
        order = tuple(order)
        if not len(p):
            return cls(order, np.zeros((0, len(order)), dtype=np.int64), np.zeros(0))
        exps = np.array([m.as_tuple(order) for m in p], dtype=np.int64)
        coefs = np.array([c for c in p._terms.values()])
        return cls(order, exps, coefs)

    @classmethod
    def one(cls, order: Sequence[str]) -> "PolyArray":
        return cls(order, np.zeros((1, len(order)), dtype=np.int64), np.ones(1))

    def to_polynomial(self) -> Polynomial:
        return Polynomial._raw(
            {Monomial.from_tuple(self.order, e): c for e, c in zip(self.exps.tolist(), self.coefs)}
        )

    def __len__(self) -> int:
        return len(self.coefs)

    def mul(self, other: "PolyArray", cap: int | None = None, cap_mask: np.ndarray | None = None,
            tol: float = 0.0) -> "PolyArray":
        """Product; optionally drop terms whose degree over ``cap_mask`` columns exceeds ``cap``."""
        if not len(self) or not len(other):
            return PolyArray(self.order, np.zeros((0, len(self.order)), dtype=np.int64), np.zeros(0))
        exps = (self.exps[:, None, :] + other.exps[None, :, :]).reshape(-1, len(self.order))
        coefs = np.outer(self.coefs, other.coefs).ravel()
        if cap is not None:
            mask = cap_mask if cap_mask is not None else np.ones(len(self.order), dtype=bool)
            keep = exps[:, mask].sum(axis=1) <= cap
            exps, coefs = exps[keep], coefs[keep]
        return _combine(self.order, exps, coefs, tol)


def _combine(order, exps: np.ndarray, coefs: np.ndarray, tol: float = 0.0) -> PolyArray:
    if not len(coefs):
        return PolyArray(order, exps, coefs)
    radix = exps.max(axis=0) + 1
    if float(np.prod(radix.astype(float))) < 2.0**62:
        keys = np.zeros(len(coefs), dtype=np.int64)
        for j in range(exps.shape[1]):
            keys = keys * int(radix[j]) + exps[:, j]
        uniq, first, inv = np.unique(keys, return_index=True, return_inverse=True)
        out_exps = exps[first]
    else:
        out_exps, inv = np.unique(exps, axis=0, return_inverse=True)
        inv = inv.ravel()
        uniq = out_exps
    summed = np.bincount(inv, weights=coefs, minlength=len(uniq))
    keep = np.abs(summed) > tol
    return PolyArray(order, out_exps[keep], summed[keep])
