"""SDP data model: ``maximize objective(z)`` subject to affine blocks ``B(z) >= 0``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from ..moments import LinForm, SymMatrixAffine

STATUSES = ("optimal", "infeasible", "unbounded", "numerical_failure", "max_iter")


@dataclass
class SdpProblem:
    var_ids: tuple
    objective: LinForm
    blocks: list[SymMatrixAffine]
    equalities: list[tuple[LinForm, float]] = field(default_factory=list)
    block_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.var_ids = tuple(self.var_ids)
        if len(set(self.var_ids)) != len(self.var_ids):
            raise ValueError("duplicate decision-variable ids")
        if not self.block_names:
            self.block_names = [f"block{i}" for i in range(len(self.blocks))]
        if len(self.block_names) != len(self.blocks):
            raise ValueError("one name per block required")

    @property
    def num_vars(self) -> int:
        return len(self.var_ids)

    def validate(self, tol: float = 1e-12) -> None:
        known = set(self.var_ids)
        used: set = set()
        for name, b in zip(self.block_names, self.blocks):
            if not b.is_symmetric(tol):
                raise ValueError(f"block {name} is not symmetric")
            stray = set(b.var_ids) - known
            if stray:
                raise ValueError(f"block {name} uses undeclared variables {sorted(map(str, stray))[:3]}")
            used.update(b.var_ids)
        for form, _ in self.equalities:
            if set(form.coeffs) - known:
                raise ValueError("equality uses undeclared variables")
        stray = set(self.objective.coeffs) - known
        if stray:
            raise ValueError("objective uses undeclared variables")
        orphan = known - used - set(self.objective.coeffs)
        if orphan:
            raise ValueError(f"variables referenced nowhere: {sorted(map(str, orphan))[:3]}")

    def index(self) -> dict[Hashable, int]:
        return {v: i for i, v in enumerate(self.var_ids)}

    def compile(self) -> "CompiledSdp":
        idx = self.index()
        m = self.num_vars
        c = np.zeros(m)
        for v, a in self.objective.coeffs.items():
            c[idx[v]] = a
        consts, coefs = [], []
        for b in self.blocks:
            C, F = b.compile(idx, m)
            consts.append(np.array(C))
            coefs.append(F)
        Aeq = np.zeros((len(self.equalities), m))
        beq = np.zeros(len(self.equalities))
        for r, (form, rhs) in enumerate(self.equalities):
            for v, a in form.coeffs.items():
                Aeq[r, idx[v]] += a
            beq[r] = rhs - form.constant
        return CompiledSdp(c, self.objective.constant, consts, coefs, Aeq, beq)

    def evaluate_blocks(self, values: Mapping[Hashable, float]) -> list[np.ndarray]:
        return [b.evaluate(values) for b in self.blocks]


@dataclass
class CompiledSdp:
    """Numeric form: max ``c0 + c'w`` s.t. ``C_b + mat(F_b w) >= 0``, ``Aeq w = beq``."""

    c: np.ndarray
    c0: float
    consts: list[np.ndarray]
    coefs: list[sp.csc_matrix]
    Aeq: np.ndarray
    beq: np.ndarray

    @property
    def m(self) -> int:
        return self.c.shape[0]

    def slack(self, w: np.ndarray) -> list[np.ndarray]:
        out = []
        for C, F in zip(self.consts, self.coefs):
            s = C.shape[0]
            out.append(C + (F @ w).reshape(s, s))
        return out


@dataclass
class SdpSolution:
    status: str
    values: dict
    objective: float
    block_min_eigs: list[float]
    iterations: int
    gap: float
    dual_objective: float = float("nan")
    primal_infeasibility: float = float("nan")
    dual_infeasibility: float = float("nan")
    message: str = ""
    history: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    def vector(self, var_ids: Sequence[Hashable]) -> np.ndarray:
        return np.array([self.values[v] for v in var_ids])
