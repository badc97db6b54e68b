"""Power-of-two equilibration of blocks and decision variables.

Each block ``B`` is replaced by the congruence ``D B D`` with a positive
diagonal ``D`` (symmetric Ruiz iterations), which leaves its inertia and so
the feasible set unchanged.  Variable columns are then scaled.  All factors
are powers of two so neither step introduces rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..moments import LinForm, SymMatrixAffine
from .problem import SdpProblem, SdpSolution


def _pow2(norm: float) -> float:
    if not np.isfinite(norm) or norm <= 0.0:
        return 1.0
    return float(2.0 ** -round(np.log2(norm)))


@dataclass(frozen=True)
class ScalingRecord:
    block_factors: tuple[np.ndarray, ...]  # diagonal of D per block
    var_factors: dict

    @property
    def is_identity(self) -> bool:
        return (all(bool(np.all(f == 1.0)) for f in self.block_factors)
                and all(f == 1.0 for f in self.var_factors.values()))

    def unscale_values(self, values: dict) -> dict:
        """Scaled variable ``z'`` maps back to ``z = factor * z'``."""
        return {v: self.var_factors.get(v, 1.0) * x for v, x in values.items()}

    def scale_values(self, values: dict) -> dict:
        return {v: x / self.var_factors.get(v, 1.0) for v, x in values.items()}

    def unscale_solution(self, sol: SdpSolution, problem: SdpProblem) -> SdpSolution:
        values = self.unscale_values(sol.values)
        eigs = [float(np.linalg.eigvalsh(B)[0]) if B.size else 0.0 for B in problem.evaluate_blocks(values)]
        return SdpSolution(sol.status, values, sol.objective, eigs, sol.iterations, sol.gap,
                           sol.dual_objective, sol.primal_infeasibility, sol.dual_infeasibility,
                           sol.message, list(sol.history))


def _row_peaks(b: SymMatrixAffine, d: np.ndarray) -> np.ndarray:
    s = b.size
    W = np.outer(d, d)
    peak = np.abs(b.constant * W).max(axis=1)
    if b.coef.nnz:
        co = abs(b.coef).max(axis=1).toarray().reshape(s, s) * W
        peak = np.maximum(peak, co.max(axis=1))
    return peak


def _congruence(b: SymMatrixAffine, sweeps: int = 8) -> np.ndarray:
    d = np.ones(b.size)
    for _ in range(sweeps):
        r = _row_peaks(b, d)
        step = np.array([_pow2(np.sqrt(x)) for x in r])
        if np.all(step == 1.0):
            break
        d = d * step
    return d


def scale_problem(problem: SdpProblem) -> tuple[SdpProblem, ScalingRecord]:
    """Equilibrate each block by a diagonal congruence, then each variable's coefficient column."""
    block_factors = []
    scaled_blocks = []
    for b in problem.blocks:
        d = _congruence(b) if b.size else np.ones(0)
        block_factors.append(d)
        W = np.outer(d, d)
        coef = sp.diags(W.ravel()) @ b.coef if b.coef.nnz else b.coef
        scaled_blocks.append(SymMatrixAffine(b.constant * W, b.var_ids, coef))

    col_peak: dict = {v: 0.0 for v in problem.var_ids}
    for b in scaled_blocks:
        if b.coef.nnz:
            peaks = np.asarray(abs(b.coef).max(axis=0).todense()).ravel()
            for v, p in zip(b.var_ids, peaks):
                col_peak[v] = max(col_peak[v], float(p))
    var_factors = {v: _pow2(p) for v, p in col_peak.items()}

    out_blocks = []
    for b in scaled_blocks:
        d = np.array([var_factors[v] for v in b.var_ids])
        out_blocks.append(SymMatrixAffine(b.constant, b.var_ids, b.coef @ sp.diags(d) if len(d) else b.coef))
    obj = LinForm({v: a * var_factors[v] for v, a in problem.objective.coeffs.items()}, problem.objective.constant)
    eqs = [(LinForm({v: a * var_factors[v] for v, a in f.coeffs.items()}, f.constant), rhs)
           for f, rhs in problem.equalities]
    scaled = SdpProblem(problem.var_ids, obj, out_blocks, eqs, list(problem.block_names))
    return scaled, ScalingRecord(tuple(block_factors), var_factors)
