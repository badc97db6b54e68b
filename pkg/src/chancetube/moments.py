"""Truncated moment sequences, moment matrices and localizing matrices.

A :class:`MomentSequence` maps exponent tuples (over its own variable order)
to either numbers or :class:`LinForm` entries, the latter being affine in SDP
decision variables.  Matrix builders return :class:`SymMatrixAffine`, an
affine map ``z -> C + sum_i z_i F_i`` into symmetric matrices.
"""

from __future__ import annotations

import math
from itertools import product as iproduct
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .distributions import DistributionSpec, moments as dist_moments
from .polynomial import Monomial, Polynomial, exponent_basis

VarId = Hashable


class RelaxationOrderError(ValueError):
    def __init__(self, message: str, required_order: int):
        self.required_order = required_order
        super().__init__(f"{message} (requires relaxation order d >= {required_order})")


class InsufficientOrderError(ValueError):
    pass


class BilinearError(ValueError):
    pass


class LinForm:
    """``constant + sum_v coef_v * z_v`` over decision-variable ids."""

    __slots__ = ("constant", "coeffs")

    def __init__(self, coeffs: Mapping[VarId, float] | None = None, constant: float = 0.0):
        self.constant = float(constant)
        self.coeffs = {k: float(v) for k, v in (coeffs or {}).items() if v != 0.0}

    @classmethod
    def var(cls, vid: VarId) -> "LinForm":
        return cls({vid: 1.0})

    def __add__(self, other) -> "LinForm":
        if isinstance(other, LinForm):
            out = dict(self.coeffs)
            for k, v in other.coeffs.items():
                out[k] = out.get(k, 0.0) + v
            return LinForm(out, self.constant + other.constant)
        return LinForm(self.coeffs, self.constant + float(other))

    __radd__ = __add__

    def __neg__(self) -> "LinForm":
        return self * -1.0

    def __sub__(self, other) -> "LinForm":
        return self + (-other)

    def __rsub__(self, other) -> "LinForm":
        return (-self) + other

    def __mul__(self, s: float) -> "LinForm":
        s = float(s)
        return LinForm({k: v * s for k, v in self.coeffs.items()}, self.constant * s)

    __rmul__ = __mul__

    def evaluate(self, values: Mapping[VarId, float]) -> float:
        return self.constant + sum(c * values[k] for k, c in self.coeffs.items())

    def is_constant(self) -> bool:
        return not self.coeffs

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, float)):
            other = LinForm(constant=other)
        return isinstance(other, LinForm) and self.constant == other.constant and self.coeffs == other.coeffs

    def __hash__(self):
        return hash((self.constant, frozenset(self.coeffs.items())))

    def __repr__(self) -> str:
        parts = [f"{c:+g}*{k}" for k, c in self.coeffs.items()]
        if self.constant or not parts:
            parts.append(f"{self.constant:+g}")
        return "LinForm(" + " ".join(parts) + ")"


Entry = "float | LinForm"


def _scale_entry(e, s: float):
    return e * s


def _add_entries(a, b):
    if isinstance(a, LinForm) or isinstance(b, LinForm):
        return (a if isinstance(a, LinForm) else LinForm(constant=a)) + b
    return a + b


class MomentSequence:
    """Moments ``y_a`` for ``|a| <= order`` over the variables ``vars``."""

    def __init__(self, vars: Sequence[str], order: int, entries: Mapping[tuple[int, ...], object]):
        self.vars = tuple(vars)
        self.order = int(order)
        self.entries = dict(entries)
        zero = (0,) * len(self.vars)
        if zero not in self.entries:
            raise ValueError("moment sequence must contain the zero-order entry")
        for a in self.entries:
            if len(a) != len(self.vars) or sum(a) > self.order or min(a, default=0) < 0:
                raise ValueError(f"multi-index {a} outside order {self.order} over {self.vars}")

    # -- constructors -----------------------------------------------------
    @classmethod
    def symbolic(cls, vars: Sequence[str], order: int, tag: str = "y") -> "MomentSequence":
        n = len(vars)
        return cls(vars, order, {a: LinForm.var((tag, a)) for a in exponent_basis(n, order)})

    @classmethod
    def from_array(cls, vars: Sequence[str], order: int, values: Sequence[float]) -> "MomentSequence":
        basis = exponent_basis(len(vars), order)
        if len(values) != len(basis):
            raise ValueError(f"expected {len(basis)} values, got {len(values)}")
        return cls(vars, order, {a: float(v) for a, v in zip(basis, values)})

    @classmethod
    def from_distributions(cls, vars: Sequence[str], specs: Sequence[DistributionSpec],
                           order: int) -> "MomentSequence":
        """Moments of the product of independent scalar distributions."""
        if len(vars) != len(specs):
            raise ValueError("one distribution per variable required")
        uni = [dist_moments(s, order) for s in specs]
        entries = {}
        for a in exponent_basis(len(vars), order):
            v = 1.0
            for m, ai in zip(uni, a):
                v *= m[ai]
            entries[a] = v
        return cls(vars, order, entries)

    @classmethod
    def dirac(cls, vars: Sequence[str], point: Sequence[float], order: int) -> "MomentSequence":
        pt = [float(p) for p in point]
        entries = {a: float(np.prod([p**e for p, e in zip(pt, a)])) for a in exponent_basis(len(vars), order)}
        return cls(vars, order, entries)

    # -- access -----------------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.vars)

    def __getitem__(self, key) -> object:
        if isinstance(key, Monomial):
            key = key.as_tuple(self.vars)
        try:
            return self.entries[tuple(key)]
        except KeyError:
            if sum(key) > self.order:
                raise InsufficientOrderError(
                    f"moment {key} needs order {sum(key)} but sequence has order {self.order}"
                ) from None
            raise

    def is_symbolic(self) -> bool:
        return any(isinstance(v, LinForm) for v in self.entries.values())

    def as_array(self) -> np.ndarray:
        if self.is_symbolic():
            raise TypeError("symbolic sequence has no numeric array form")
        return np.array([self.entries[a] for a in exponent_basis(self.n, self.order)], dtype=float)

    def evaluate(self, values: Mapping[VarId, float]) -> "MomentSequence":
        out = {a: (v.evaluate(values) if isinstance(v, LinForm) else v) for a, v in self.entries.items()}
        return MomentSequence(self.vars, self.order, out)

    def truncate(self, order: int) -> "MomentSequence":
        if order > self.order:
            raise InsufficientOrderError(f"cannot raise order {self.order} to {order}")
        return MomentSequence(self.vars, order, {a: v for a, v in self.entries.items() if sum(a) <= order})

    def __sub__(self, other: "MomentSequence") -> "MomentSequence":
        if self.vars != other.vars:
            raise ValueError("sequences over different variables")
        order = min(self.order, other.order)
        out = {}
        for a in exponent_basis(self.n, order):
            out[a] = _add_entries(self.entries[a], _scale_entry(other.entries[a], -1.0))
        return MomentSequence(self.vars, order, out)

    def marginal(self, vars: Sequence[str]) -> "MomentSequence":
        idx = [self.vars.index(v) for v in vars]
        out = {}
        for a in exponent_basis(len(vars), self.order):
            full = [0] * self.n
            for i, e in zip(idx, a):
                full[i] = e
            out[a] = self.entries[tuple(full)]
        return MomentSequence(vars, self.order, out)

    def mean(self) -> np.ndarray:
        eye = np.eye(self.n, dtype=int)
        return np.array([float(self.entries[tuple(r)]) for r in eye])

    def __repr__(self):
        kind = "symbolic" if self.is_symbolic() else "numeric"
        return f"MomentSequence({kind}, vars={self.vars}, order={self.order})"


# ---------------------------------------------------------------------------
# Affine symmetric matrices


class SymMatrixAffine:
    """``C + sum_k z_{v_k} F_k`` with symmetric ``C`` and ``F_k``.

    ``coef`` is a sparse ``(size*size, len(var_ids))`` matrix whose column k is
    the row-major vectorization of ``F_k``.
    """

    def __init__(self, constant: np.ndarray, var_ids: Sequence[VarId] = (), coef: sp.spmatrix | None = None):
        self.constant = np.asarray(constant, dtype=float)
        s = self.constant.shape[0]
        if self.constant.shape != (s, s):
            raise ValueError("constant block must be square")
        self.var_ids = tuple(var_ids)
        if coef is None:
            coef = sp.csc_matrix((s * s, len(self.var_ids)))
        self.coef = sp.csc_matrix(coef)
        if self.coef.shape != (s * s, len(self.var_ids)):
            raise ValueError("coefficient matrix shape mismatch")

    @property
    def size(self) -> int:
        return self.constant.shape[0]

    @classmethod
    def from_entries(cls, size: int, entries: Mapping[tuple[int, int], object]) -> "SymMatrixAffine":
        """Build from upper-triangle entries ``(i, j), i <= j`` holding floats or LinForms."""
        const = np.zeros((size, size))
        rows, cols, vals = [], [], []
        var_pos: dict[VarId, int] = {}
        for (i, j), e in entries.items():
            if i > j:
                i, j = j, i
            if isinstance(e, LinForm):
                c = e.constant
                for vid, v in e.coeffs.items():
                    k = var_pos.setdefault(vid, len(var_pos))
                    rows.append(i * size + j); cols.append(k); vals.append(v)
                    if i != j:
                        rows.append(j * size + i); cols.append(k); vals.append(v)
            else:
                c = float(e)
            const[i, j] += c
            if i != j:
                const[j, i] += c
        coef = sp.csc_matrix((vals, (rows, cols)), shape=(size * size, len(var_pos)))
        coef.sum_duplicates()
        return cls(const, tuple(var_pos), coef)

    def is_symmetric(self, tol: float = 0.0) -> bool:
        if np.abs(self.constant - self.constant.T).max(initial=0.0) > tol:
            return False
        s = self.size
        perm = np.arange(s * s).reshape(s, s).T.ravel()
        diff = self.coef - self.coef[perm, :]
        return abs(diff).max() <= tol if diff.nnz else True

    def entry(self, i: int, j: int) -> LinForm:
        row = self.coef.getrow(i * self.size + j).tocoo()
        return LinForm({self.var_ids[c]: v for c, v in zip(row.col, row.data)}, self.constant[i, j])

    def evaluate(self, values: Mapping[VarId, float] | None = None) -> np.ndarray:
        if not self.var_ids:
            return self.constant.copy()
        z = np.array([values[v] for v in self.var_ids])
        return self.constant + (self.coef @ z).reshape(self.size, self.size)

    def coefficient_matrix(self, vid: VarId) -> np.ndarray:
        k = self.var_ids.index(vid)
        return self.coef[:, k].toarray().reshape(self.size, self.size)

    def compile(self, index: Mapping[VarId, int], m: int) -> tuple[np.ndarray, sp.csc_matrix]:
        """Constant block and coefficient matrix over a global variable index."""
        coo = self.coef.tocoo()
        cols = np.array([index[self.var_ids[c]] for c in coo.col], dtype=np.int64)
        F = sp.csc_matrix((coo.data, (coo.row, cols)), shape=(self.size**2, m))
        return self.constant, F

    def _combine(self, other: "SymMatrixAffine", sign: float) -> "SymMatrixAffine":
        if other.size != self.size:
            raise ValueError("block sizes differ")
        ids = list(self.var_ids)
        pos = {v: i for i, v in enumerate(ids)}
        for v in other.var_ids:
            if v not in pos:
                pos[v] = len(ids)
                ids.append(v)
        index = {v: i for i, v in enumerate(ids)}
        _, A = self.compile(index, len(ids))
        _, B = other.compile(index, len(ids))
        return SymMatrixAffine(self.constant + sign * other.constant, ids, A + sign * B)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __mul__(self, s: float):
        return SymMatrixAffine(self.constant * s, self.var_ids, self.coef * s)

    __rmul__ = __mul__

    def __repr__(self):
        return f"SymMatrixAffine(size={self.size}, vars={len(self.var_ids)})"


# ---------------------------------------------------------------------------
# Matrix constructions


def _weighted_matrix(y: MomentSequence, weights: list[tuple[tuple[int, ...], float]], s: int) -> SymMatrixAffine:
    """Entry (i, j) = sum_g w_g * y[g + b_i + b_j] over the degree-s basis."""
    basis = exponent_basis(y.n, s)
    size = len(basis)
    need = 2 * s + max((sum(g) for g, _ in weights), default=0)
    if need > y.order:
        raise InsufficientOrderError(f"matrix needs moments up to order {need}, sequence has {y.order}")
    const = np.zeros((size, size))
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    var_pos: dict[VarId, int] = {}
    ent = y.entries
    for i in range(size):
        bi = basis[i]
        for j in range(i, size):
            bij = tuple(p + q for p, q in zip(bi, basis[j]))
            c = 0.0
            for g, w in weights:
                e = ent[tuple(p + q for p, q in zip(g, bij))]
                if isinstance(e, LinForm):
                    c += w * e.constant
                    for vid, v in e.coeffs.items():
                        k = var_pos.setdefault(vid, len(var_pos))
                        rows.append(i * size + j); cols.append(k); vals.append(w * v)
                        if i != j:
                            rows.append(j * size + i); cols.append(k); vals.append(w * v)
                else:
                    c += w * e
            const[i, j] = c
            const[j, i] = c
    coef = sp.csc_matrix((vals, (rows, cols)), shape=(size * size, len(var_pos)))
    coef.sum_duplicates()
    return SymMatrixAffine(const, tuple(var_pos), coef)


def moment_matrix(y: MomentSequence, d: int) -> SymMatrixAffine:
    """``M_d(y)``: entry (i, j) is ``y[b_i + b_j]`` over the graded-lex basis of degree <= d."""
    if d < 0:
        raise ValueError("d must be nonnegative")
    if 2 * d > y.order:
        raise InsufficientOrderError(f"M_{d} needs order {2 * d}, sequence has {y.order}")
    return _weighted_matrix(y, [((0,) * y.n, 1.0)], d)


def localizing_radius(p: Polynomial) -> int:
    return math.ceil(p.degree / 2)


def localizing_matrix(y: MomentSequence, p: Polynomial, d: int) -> SymMatrixAffine:
    """``M_{d-r}(y; p)`` with ``r = ceil(deg p / 2)`` from the actual (pruned) degree."""
    extra = set(p.variables) - set(y.vars)
    if extra:
        raise ValueError(f"polynomial uses variables {sorted(extra)} absent from the sequence {y.vars}")
    r = localizing_radius(p)
    if d - r < 0:
        raise RelaxationOrderError(f"localizer of a degree-{p.degree} polynomial", r)
    if 2 * d > y.order:
        raise InsufficientOrderError(f"localizer at order {d} needs moments up to {2 * d}")
    weights = [(m.as_tuple(y.vars), c) for m, c in p.items()]
    return _weighted_matrix(y, weights, d - r)


def product_sequence(parts: Sequence[MomentSequence]) -> MomentSequence:
    """Moments of a product measure of independent parts over disjoint variables."""
    vars: list[str] = []
    for p in parts:
        overlap = set(vars) & set(p.vars)
        if overlap:
            raise ValueError(f"parts share variables {sorted(overlap)}")
        vars.extend(p.vars)
    if sum(1 for p in parts if p.is_symbolic()) > 1:
        raise BilinearError("at most one symbolic part keeps the product affine in decision variables")
    order = min(p.order for p in parts)
    slices = []
    start = 0
    for p in parts:
        slices.append((start, start + p.n))
        start += p.n
    entries = {}
    for a in exponent_basis(len(vars), order):
        num = 1.0
        sym = None
        for p, (lo, hi) in zip(parts, slices):
            e = p.entries[a[lo:hi]]
            if isinstance(e, LinForm):
                sym = e
            else:
                num *= e
        entries[a] = sym * num if sym is not None else num
    return MomentSequence(vars, order, entries)


def psd_check(M: np.ndarray, tol: float = 1e-8) -> tuple[bool, float]:
    """PSD test with tolerance scaled by the largest absolute entry."""
    M = np.asarray(M, dtype=float)
    scale = max(1.0, float(np.abs(M).max(initial=0.0)))
    if np.abs(M - M.T).max(initial=0.0) > tol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    lam = float(np.linalg.eigvalsh((M + M.T) / 2)[0]) if M.size else 0.0
    return lam >= -tol * scale, lam


# ---------------------------------------------------------------------------
# Exact affine change of variables for numeric sequences


def affine_transform(y: MomentSequence, shift: Sequence[float], scale: Sequence[float]) -> MomentSequence:
    """Moments of ``(x - shift) / scale`` computed exactly from the raw moments of ``x``."""
    if y.is_symbolic():
        raise TypeError("affine_transform needs a numeric sequence")
    shift = [float(c) for c in shift]
    scale = [float(s) for s in scale]
    n = y.n
    binom = [[math.comb(a, b) for b in range(a + 1)] for a in range(y.order + 1)]
    out = {}
    for a in exponent_basis(n, y.order):
        total = 0.0
        for b in iproduct(*(range(ai + 1) for ai in a)):
            w = 1.0
            for ai, bi, c in zip(a, b, shift):
                w *= binom[ai][bi] * (-c) ** (ai - bi)
            if w:
                total += w * y.entries[b]
        for ai, s in zip(a, scale):
            total /= s**ai
        out[a] = total
    return MomentSequence(y.vars, y.order, out)


def hankel_from_univariate(values: Sequence[float], d: int) -> np.ndarray:
    """Moment matrix of a one-dimensional sequence (a Hankel matrix)."""
    v = np.asarray(values, dtype=float)
    if len(v) < 2 * d + 1:
        raise InsufficientOrderError(f"need {2 * d + 1} moments, got {len(v)}")
    return np.array([[v[i + j] for j in range(d + 1)] for i in range(d + 1)])
