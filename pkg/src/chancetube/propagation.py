"""Forward propagation of state moments through the closed loop.

Two strategies:

* exact recursion keeps ``x(k)`` as a polynomial in the initial states
  ``x@0`` and the past noises ``w@j`` and takes expectations term by term
  using independence;
* one-step propagation maps the moments of ``x(k)`` to those of ``x(k+1)``
  using only the Markov step.  It is exact when enough input moments are
  available; otherwise centered monomials above the available order are
  dropped and the result is flagged as truncated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Mapping, Sequence

import numpy as np

from .distributions import DistributionSpec, UncertaintyModel, moments as dist_moments
from .moments import MomentSequence, affine_transform
from .polynomial import PolyArray, Polynomial, _combine, exponent_basis


class BudgetExceeded(RuntimeError):
    """Exact recursion would exceed the configured term or pair budget."""


@dataclass
class StateMoments:
    k: int
    seq: MomentSequence
    strategy: str = "exact_recursion"  # or "one_step"
    truncated: bool = False
    closure_order: int | None = None
    gains: list = field(default_factory=list)
    closure: str | None = None  # "drop" or "quadrature" when truncated
    discarded: float = 0.0  # mass outside the tube removed by conditioning

    def __post_init__(self):
        if abs(float(self.seq.entries[(0,) * self.seq.n]) - 1.0) > 1e-9:
            raise ValueError("state moment sequence must have unit mass")

    @property
    def order(self) -> int:
        return self.seq.order

    @property
    def tag(self) -> str:
        if self.strategy == "one_step" and self.truncated:
            return f"one_step_truncated({self.closure_order})"
        return self.strategy

    def truncate(self, order: int) -> "StateMoments":
        return StateMoments(self.k, self.seq.truncate(order), self.strategy, self.truncated,
                            self.closure_order, list(self.gains), self.closure)


def initial_moments(states: Sequence[str], specs: Sequence[DistributionSpec], order: int) -> StateMoments:
    return StateMoments(0, MomentSequence.from_distributions(states, specs, order), "exact_recursion")


def tagged(name: str, k: int) -> str:
    return f"{name}@{k}"


def untag(var: str) -> tuple[str, int]:
    name, _, k = var.rpartition("@")
    return name, int(k)


# ---------------------------------------------------------------------------
# Expectation kernels over independent variables


class _Tables:
    """Univariate raw moments per variable, grown on demand."""

    def __init__(self, specs: Mapping[str, DistributionSpec]):
        self.specs = dict(specs)
        self.cache: dict[str, np.ndarray] = {}

    def get(self, var: str, up_to: int) -> np.ndarray:
        t = self.cache.get(var)
        if t is None or len(t) <= up_to:
            t = dist_moments(self.specs[var], max(up_to, 2 * (len(t) if t is not None else 4)))
            self.cache[var] = t
        return t


def _expect(pa: PolyArray, tables: _Tables) -> float:
    if not len(pa):
        return 0.0
    w = pa.coefs.copy()
    for j, v in enumerate(pa.order):
        col = pa.exps[:, j]
        if col.any():
            w = w * tables.get(v, int(col.max()))[col]
    return float(np.sum(w))


def _expect_pair(A: PolyArray, B: PolyArray, tables: _Tables, chunk: int = 1 << 21) -> float:
    """``E[A * B]`` without forming the product polynomial."""
    if len(A) > len(B):
        A, B = B, A
    rows = max(1, chunk // max(len(B), 1))
    total = 0.0
    maxes = [(int(A.exps[:, j].max(initial=0)) + int(B.exps[:, j].max(initial=0))) for j in range(len(A.order))]
    tabs = [tables.get(v, m) if m else None for v, m in zip(A.order, maxes)]
    for lo in range(0, len(A), rows):
        a_exps = A.exps[lo:lo + rows]
        w = np.outer(A.coefs[lo:lo + rows], B.coefs)
        for j, t in enumerate(tabs):
            if t is not None:
                w *= t[a_exps[:, j][:, None] + B.exps[:, j][None, :]]
        total += float(w.sum())
    return total


# ---------------------------------------------------------------------------
# Exact recursion


@dataclass
class SymbolicState:
    k: int
    states: tuple[str, ...]
    polys: list[Polynomial]

    @classmethod
    def initial(cls, states: Sequence[str]) -> "SymbolicState":
        return cls(0, tuple(states), [Polynomial.var(tagged(s, 0)) for s in states])

    @property
    def variables(self) -> tuple[str, ...]:
        vs = set()
        for p in self.polys:
            vs |= set(p.variables)
        return tuple(sorted(vs, key=lambda v: (untag(v)[1], v)))

    def term_count(self) -> int:
        return sum(len(p) for p in self.polys)


def advance_symbolic(sym: SymbolicState, closed_loop: Sequence[Polynomial], noise_vars: Sequence[str],
                     term_budget: int | None = None) -> SymbolicState:
    """Substitute ``x(k) -> sym`` into ``x(k+1) = closed_loop(x(k), w(k))`` and tag the new noises."""
    k = sym.k
    allowed = set(sym.states) | set(noise_vars)
    for p in closed_loop:
        extra = set(p.variables) - allowed
        if extra:
            raise ValueError(f"closed-loop polynomial has non-numeric symbols {sorted(extra)}")
    order = tuple(sym.variables) + tuple(tagged(w, k) for w in noise_vars)
    base = [PolyArray.from_polynomial(p, order) for p in sym.polys]
    noise_idx = {w: order.index(tagged(w, k)) for w in noise_vars}
    powers: dict[tuple[int, int], PolyArray] = {}

    def power(i: int, e: int) -> PolyArray:
        if e == 0:
            return PolyArray.one(order)
        if (i, e) not in powers:
            powers[(i, e)] = power(i, e - 1).mul(base[i])
            if term_budget is not None and len(powers[(i, e)]) > term_budget:
                raise BudgetExceeded(f"power {e} of x{i}({k}) exceeds {term_budget} terms")
        return powers[(i, e)]

    out = []
    for p in closed_loop:
        exps_all, coefs_all = [], []
        for mono, c in p.items():
            term = PolyArray.one(order)
            for i, s in enumerate(sym.states):
                e = mono.exponent(s)
                if e:
                    term = term.mul(power(i, e))
            shift = np.zeros(len(order), dtype=np.int64)
            for w, j in noise_idx.items():
                shift[j] = mono.exponent(w)
            exps_all.append(term.exps + shift)
            coefs_all.append(term.coefs * c)
        pa = _combine(order, np.vstack(exps_all), np.concatenate(coefs_all)) if exps_all else PolyArray(
            order, np.zeros((0, len(order)), dtype=np.int64), np.zeros(0))
        if term_budget is not None and len(pa) > term_budget:
            raise BudgetExceeded(f"x({k + 1}) exceeds {term_budget} terms")
        out.append(pa.to_polynomial())
    return SymbolicState(k + 1, sym.states, out)


def _specs_for(variables: Sequence[str], states: Sequence[str], model: UncertaintyModel) -> dict:
    specs = {}
    for v in variables:
        name, j = untag(v)
        if name in states:
            if j != 0:
                raise ValueError(f"state variable {v} is not an initial condition")
            specs[v] = model.initial[name]
        else:
            specs[v] = model.noise_at(j)[name]
    return specs


def moments_from_symbolic(sym: SymbolicState, model: UncertaintyModel, up_to: int,
                          pair_budget: int | None = None) -> StateMoments:
    """Exact moments ``E[x(k)^a]`` for ``|a| <= up_to`` by expanding products of the state polynomials."""
    order = sym.variables
    tables = _Tables(_specs_for(order, sym.states, model))
    base = [PolyArray.from_polynomial(p, order) for p in sym.polys]
    n = len(sym.states)
    cache: dict[tuple[int, ...], PolyArray] = {(0,) * n: PolyArray.one(order)}

    def prod(g: tuple[int, ...]) -> PolyArray:
        if g not in cache:
            i = next(i for i, e in enumerate(g) if e)
            h = list(g)
            h[i] -= 1
            cache[g] = prod(tuple(h)).mul(base[i])
        return cache[g]

    entries = {}
    for a in exponent_basis(n, up_to):
        half = tuple(e // 2 for e in a)
        rest = tuple(e - h for e, h in zip(a, half))
        A, B = prod(half), prod(rest)
        if pair_budget is not None and len(A) * len(B) > pair_budget:
            raise BudgetExceeded(f"moment {a} of x({sym.k}) needs {len(A) * len(B)} term pairs")
        entries[a] = _expect_pair(A, B, tables) if sum(a) else 1.0
    return StateMoments(sym.k, MomentSequence(sym.states, up_to, entries), "exact_recursion")


# ---------------------------------------------------------------------------
# One-step propagation


def state_degree(closed_loop: Sequence[Polynomial], states: Sequence[str]) -> int:
    return max([1] + [p.degree_in(states) for p in closed_loop])


def gauss_atoms(mu: Sequence[float], tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray] | None:
    """Nodes and weights of the Gauss quadrature measure for univariate moments ``mu[0..L]``.

    The rule has ``m = (L + 1) // 2`` nodes and reproduces ``mu[0..2m-1]``;
    ``m`` shrinks while the Hankel matrix is numerically singular (finitely
    supported measures).  Returns None if the sequence is not a valid one.
    """
    mu = np.asarray(mu, dtype=float)
    if mu[0] <= 0:
        return None
    mu = mu / mu[0]
    s = np.sqrt(max(mu[2] - mu[1] ** 2, 0.0)) if len(mu) > 2 else 0.0
    if s <= tol:
        return np.array([mu[1] if len(mu) > 1 else 0.0]), np.array([1.0])
    c = mu[1]
    L = len(mu) - 1
    # standardize, since Hankel matrices of raw moments are badly conditioned
    std = np.array([sum(comb(j, i) * mu[i] * (-c) ** (j - i) for i in range(j + 1)) / s ** j for j in range(L + 1)])
    for m in range((L + 1) // 2, 0, -1):
        H = np.array([[std[i + j] for j in range(m)] for i in range(m)])
        lam = np.linalg.eigvalsh(H)
        if lam[0] <= tol * max(1.0, lam[-1]):
            continue
        coef = np.linalg.solve(H, -std[m:2 * m])
        nodes = np.roots(np.r_[1.0, coef[::-1]])
        if np.iscomplexobj(nodes):
            if np.max(np.abs(nodes.imag)) > 1e-8:
                continue
            nodes = nodes.real
        V = np.vander(nodes, m, increasing=True).T
        weights = np.linalg.solve(V, std[:m])
        if np.any(weights < -1e-12):
            continue
        return c + s * nodes, np.clip(weights, 0.0, None)
    return None


def advance_one_step(sm: StateMoments, closed_loop: Sequence[Polynomial], noise_specs: Mapping[str, DistributionSpec],
                     up_to: int, gains: Mapping[str, float] | None = None,
                     region: Sequence[Polynomial] | None = None) -> StateMoments:
    """Moments of ``x(k+1)`` up to ``up_to`` from those of ``x(k)``.

    The step is evaluated in coordinates centered on the mean of ``x(k)``.
    Monomials whose centered state degree exceeds the available order are
    dropped; that only happens when ``order(x(k)) < up_to * deg_x``, and the
    result is then flagged as truncated.

    For a single state the truncated step instead closes the sequence with
    the Gauss quadrature measure matching the known moments; when ``region``
    is given, atoms violating any of its polynomials are removed and the rest
    renormalized (propagation conditioned on staying in the tube).
    """
    states = sm.seq.vars
    L_in = sm.order
    mean = sm.seq.mean()
    centered = affine_transform(sm.seq, mean, np.ones(len(states)))
    noise_vars = tuple(sorted({v for p in closed_loop for v in p.variables} - set(states)))
    missing = [w for w in noise_vars if w not in noise_specs]
    if missing:
        raise ValueError(f"closed loop has symbols without distributions: {missing}")
    order = tuple(states) + noise_vars
    shift = {s: Polynomial.constant(m) + Polynomial.var(s) for s, m in zip(states, mean)}
    base = [PolyArray.from_polynomial(p.substitute(shift), order) for p in closed_loop]
    mask = np.array([v in states for v in order])
    deg_x = state_degree(closed_loop, states)
    truncated = sm.truncated or L_in < up_to * deg_x

    n = len(states)
    closure = "drop"
    discarded = 0.0
    if truncated and n == 1 and not sm.seq.is_symbolic():
        atoms = gauss_atoms([centered[(j,)] for j in range(L_in + 1)])
        if atoms is not None:
            # extend with the moments of a quadrature measure matching the known ones
            closure = "quadrature"
            nodes, weights = atoms
            if region:
                x = states[0]
                inside = np.array([all(p.eval({x: mean[0] + a}) >= 0 for p in region) for a in nodes])
                if inside.any():
                    discarded = float(weights[~inside].sum())
                    nodes, weights = nodes[inside], weights[inside] / weights[inside].sum()
            L_in = max(L_in, up_to * deg_x)
            cm = np.array([weights @ nodes ** j for j in range(L_in + 1)])
            cm[0] = 1.0
    if closure == "drop":
        cm = np.zeros((L_in + 1,) * n)
        for a, v in centered.entries.items():
            cm[a] = v
    tables = _Tables({w: noise_specs[w] for w in noise_vars})

    def expect(pa: PolyArray) -> float:
        if not len(pa):
            return 0.0
        w = pa.coefs * cm[tuple(pa.exps[:, :n].T)]
        for j, v in enumerate(noise_vars, start=n):
            col = pa.exps[:, j]
            if col.any():
                w = w * tables.get(v, int(col.max()))[col]
        return float(np.sum(w))

    cache: dict[tuple[int, ...], PolyArray] = {(0,) * n: PolyArray.one(order)}

    def prod(g):
        if g not in cache:
            i = next(i for i, e in enumerate(g) if e)
            h = list(g)
            h[i] -= 1
            cache[g] = prod(tuple(h)).mul(base[i], cap=L_in, cap_mask=mask)
        return cache[g]

    entries = {a: (expect(prod(a)) if sum(a) else 1.0) for a in exponent_basis(n, up_to)}
    prov = list(sm.gains) + ([dict(gains)] if gains is not None else [])
    return StateMoments(sm.k + 1, MomentSequence(states, up_to, entries), "one_step", truncated,
                        sm.order if truncated else None, prov, closure if truncated else None, discarded)


class Propagator:
    """Moments of ``x(k)`` along the synthesis loop.

    ``order`` is the moment order kept at every step.  Under ``auto`` the
    exact recursion is used while ``deg(x(k)) * order`` stays within
    ``degree_budget`` (and the term budgets hold); afterwards moments advance
    one step at a time with closure at ``order``.  ``exact`` never falls back
    and ``one_step`` never uses the recursion.
    """

    def __init__(self, states: Sequence[str], model: UncertaintyModel, order: int, strategy: str = "auto",
                 degree_budget: int = 24, term_budget: int = 200_000, pair_budget: int = 20_000_000):
        if strategy not in ("auto", "exact", "one_step"):
            raise ValueError(f"unknown propagation strategy {strategy!r}")
        self.states = tuple(states)
        self.model = model
        self.order = int(order)
        self.strategy = strategy
        self.degree_budget = degree_budget
        self.term_budget = term_budget
        self.pair_budget = pair_budget
        self.current = initial_moments(self.states, model.initial_specs(self.states), self.order)
        self.sym: SymbolicState | None = None if strategy == "one_step" else SymbolicState.initial(self.states)
        self.k = 0
        self.events: list[str] = []

    def moments(self, up_to: int | None = None) -> StateMoments:
        if up_to is None or up_to == self.order:
            return self.current
        if up_to > self.order:
            raise ValueError(f"propagation keeps order {self.order}, {up_to} requested")
        return self.current.truncate(up_to)

    def _fallback(self, why: str) -> None:
        if self.strategy == "exact":
            raise BudgetExceeded(why)
        self.events.append(f"k={self.k}: exact recursion stopped ({why}); continuing one step at a time")
        self.sym = None

    def advance(self, closed_loop: Sequence[Polynomial], gains: Mapping[str, float] | None = None,
                region: Sequence[Polynomial] | None = None) -> StateMoments:
        noise = self.model.noise_at(self.k)
        nxt = None
        if self.sym is not None:
            try:
                sym = advance_symbolic(self.sym, closed_loop, list(noise), self.term_budget)
                deg = max(p.degree for p in sym.polys)
                if self.strategy == "auto" and deg * self.order > self.degree_budget:
                    raise BudgetExceeded(f"degree {deg} times order {self.order} exceeds {self.degree_budget}")
                nxt = moments_from_symbolic(sym, self.model, self.order, self.pair_budget)
                nxt.gains = list(self.current.gains) + ([dict(gains)] if gains is not None else [])
                self.sym = sym
            except BudgetExceeded as exc:
                self.k += 1
                self._fallback(str(exc))
                self.k -= 1
        if nxt is None:
            nxt = advance_one_step(self.current, closed_loop, noise, self.order, gains, region)
        self.current = nxt
        self.k += 1
        return nxt
