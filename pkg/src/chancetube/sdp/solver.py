"""Infeasible-start primal-dual interior-point method for small dense SDPs.

The problem ``max c'w  s.t.  C_b + sum_i w_i F_{b,i} >= 0`` is the dual of
``min sum_b <C_b, X_b>  s.t.  -sum_b <F_{b,i}, X_b> = c_i, X_b >= 0``.
Search directions are HKM with a Mehrotra predictor-corrector; infeasibility
and unboundedness are read off diverging iterates by ratio tests.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .problem import CompiledSdp, SdpProblem, SdpSolution
from .scaling import scale_problem

log = logging.getLogger(__name__)

_KRON_LIMIT = 44  # blocks up to this size build the Schur block through kron(X, Z^-1)


@dataclass(frozen=True)
class SolverOptions:
    gap_tol: float = 1e-7
    feas_tol: float = 1e-8
    max_iter: int = 200
    infeas_tol: float = 1e-8
    scale: bool = True


class _Block:
    """One PSD block's data with per-column nonzero patterns cached."""

    def __init__(self, C: np.ndarray, F: sp.csc_matrix):
        self.s = C.shape[0]
        self.C = C
        F = sp.csc_matrix(F)
        F.eliminate_zeros()
        self.active = np.flatnonzero(np.diff(F.indptr))
        self.Fa = F[:, self.active].tocsc()
        self.FaT = self.Fa.T.tocsr()
        self.F = F
        self.cols = []
        if self.s > _KRON_LIMIT:
            for k in range(len(self.active)):
                lo, hi = self.Fa.indptr[k], self.Fa.indptr[k + 1]
                rows = self.Fa.indices[lo:hi]
                self.cols.append((rows // self.s, rows % self.s, self.Fa.data[lo:hi]))

    def mat(self, y: np.ndarray) -> np.ndarray:
        return (self.F @ y).reshape(self.s, self.s)

    def adj(self, U: np.ndarray) -> np.ndarray:
        """``(<F_i, U>)_i`` over all variables."""
        return self.F.T @ U.ravel()

    def schur(self, X: np.ndarray, Zi: np.ndarray) -> np.ndarray:
        if self.s <= _KRON_LIMIT:
            K = np.kron(X, Zi)
            KF = (self.FaT @ K.T).T
            return self.FaT @ KF
        s = self.s
        U = np.empty((s * s, len(self.active)))
        for k, (P, Q, V) in enumerate(self.cols):
            U[:, k] = (X[:, P] @ (V[:, None] * Zi[Q, :])).ravel()
        return self.FaT @ U


def _sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def _max_step(L: np.ndarray, D: np.ndarray) -> float:
    """Largest a with ``L L' + a D >= 0`` given the Cholesky factor ``L``."""
    S = la.solve_triangular(L, D, lower=True)
    S = la.solve_triangular(L, S.T, lower=True)
    lam = la.eigvalsh(_sym(S))[0]
    return np.inf if lam >= 0 else -1.0 / lam


class _Reduced:
    """Equality-free problem ``w = w0 + T t`` after eliminating equalities."""

    def __init__(self, comp: CompiledSdp):
        m = comp.m
        w0 = np.zeros(m)
        fixed = np.zeros(m, dtype=bool)
        A, b = comp.Aeq.copy(), comp.beq.copy()
        self.consistent = True
        # Single-variable rows pin variables directly.
        changed = True
        while changed and len(A):
            changed = False
            keep = []
            for r in range(len(A)):
                nz = np.flatnonzero(np.abs(A[r]) > 0)
                nz = nz[~fixed[nz]]
                rhs = b[r] - A[r, fixed] @ w0[fixed]
                if len(nz) == 1:
                    j = nz[0]
                    w0[j] = rhs / A[r, j]
                    fixed[j] = True
                    changed = True
                elif len(nz) == 0:
                    if abs(rhs) > 1e-9 * (1 + abs(b[r])):
                        self.consistent = False
                else:
                    keep.append(r)
            A, b = A[keep], b[keep]
        free = np.flatnonzero(~fixed)
        if len(A):
            R = A[:, free]
            rhs = b - A[:, fixed] @ w0[fixed]
            wp, *_ = np.linalg.lstsq(R, rhs, rcond=None)
            if np.linalg.norm(R @ wp - rhs) > 1e-9 * (1 + np.linalg.norm(rhs)):
                self.consistent = False
            w0[free] = wp
            N = la.null_space(R)
            T = np.zeros((m, N.shape[1]))
            T[free] = N
            self.T = sp.csc_matrix(T)
        else:
            self.T = sp.csc_matrix((np.ones(len(free)), (free, np.arange(len(free)))), shape=(m, len(free)))
        self.w0 = w0
        self.c = self.T.T @ comp.c
        self.c0 = comp.c0 + comp.c @ w0
        self.consts = []
        self.coefs = []
        for C, F in zip(comp.consts, comp.coefs):
            s = C.shape[0]
            self.consts.append(C + (F @ w0).reshape(s, s))
            self.coefs.append(sp.csc_matrix(F @ self.T))

    def lift(self, t: np.ndarray) -> np.ndarray:
        return self.w0 + self.T @ t


def _result(problem, comp, red, t, status, it, gap, dobj, pinf, dinf, msg, history) -> SdpSolution:
    w = red.lift(t) if t is not None else np.full(comp.m, np.nan)
    values = dict(zip(problem.var_ids, map(float, w)))
    obj = float(comp.c0 + comp.c @ w) if t is not None else float("nan")
    if t is not None:
        eigs = [float(la.eigvalsh(_sym(B))[0]) if B.size else 0.0 for B in comp.slack(w)]
    else:
        eigs = [float("nan")] * len(comp.consts)
    return SdpSolution(status, values, obj, eigs, it, gap, dobj, pinf, dinf, msg, history)


def _ipm(problem: SdpProblem, opts: SolverOptions) -> SdpSolution:
    comp = problem.compile()
    red = _Reduced(comp)
    history: list[tuple[float, float]] = []
    if not red.consistent:
        return _result(problem, comp, red, None, "infeasible", 0, np.inf, np.nan, np.inf, np.nan,
                       "inconsistent equality constraints", history)
    k = red.T.shape[1]
    blocks = [_Block(C, F) for C, F in zip(red.consts, red.coefs)]
    c = red.c

    touched = np.zeros(k, dtype=bool)
    for B in blocks:
        touched[B.active] = True
    if np.any(np.abs(c[~touched]) > 0):
        return _result(problem, comp, red, np.zeros(k), "unbounded", 0, np.inf, np.inf, 0.0, 0.0,
                       "objective depends on a variable no block constrains", history)
    if k == 0 or not blocks:
        t = np.zeros(k)
        ok = all(la.eigvalsh(B.C)[0] >= -opts.feas_tol for B in blocks)
        return _result(problem, comp, red, t, "optimal" if ok else "infeasible", 0, 0.0,
                       red.c0 + 0.0, 0.0, 0.0, "no free variables", history)

    n_total = sum(B.s for B in blocks)
    normC = np.sqrt(sum(np.sum(B.C**2) for B in blocks))
    normc = np.linalg.norm(c)

    X, Z = [], []
    for B in blocks:
        fnorm = np.sqrt(np.asarray(B.F.multiply(B.F).sum(axis=0)).ravel())
        xi = max(10.0, np.sqrt(B.s), B.s * np.max((1 + np.abs(c)) / (1 + fnorm)))
        eta = max(10.0, np.sqrt(B.s), np.linalg.norm(B.C), fnorm.max(initial=0.0))
        X.append(xi * np.eye(B.s))
        Z.append(eta * np.eye(B.s))
    y = np.zeros(k)
    msg = ""
    status = "max_iter"
    stall = 0
    it = 0
    gap = pinf = dinf = np.inf
    dobj = np.nan

    for it in range(opts.max_iter + 1):
        try:
            LX = [la.cholesky(x, lower=True) for x in X]
            LZ = [la.cholesky(z, lower=True) for z in Z]
        except la.LinAlgError:
            status, msg = "numerical_failure", "iterate lost positive definiteness"
            break
        Zi = [la.cho_solve((L, True), np.eye(L.shape[0])) for L in LZ]
        Zi = [_sym(a) for a in Zi]

        AX = -sum(B.adj(x) for B, x in zip(blocks, X))
        rp = c - AX
        Rd = [B.C + B.mat(y) - z for B, z in zip(blocks, Z)]
        pobj_x = sum(np.vdot(B.C, x) for B, x in zip(blocks, X))  # upper bound side
        dobj_y = float(c @ y)
        mu = sum(np.vdot(x, z) for x, z in zip(X, Z)) / n_total
        pinf = np.linalg.norm(rp) / (1 + normc)
        dinf = np.sqrt(sum(np.sum(r**2) for r in Rd)) / (1 + normC)
        gap = abs(pobj_x - dobj_y) / (1 + abs(pobj_x) + abs(dobj_y))
        history.append((dobj_y + red.c0, pobj_x + red.c0))
        dobj = pobj_x + red.c0
        log.debug("it %d  obj %.9g  bound %.9g  gap %.2e  pinf %.2e  dinf %.2e", it, dobj_y, pobj_x, gap, pinf, dinf)

        if gap <= opts.gap_tol and pinf <= opts.feas_tol and dinf <= opts.feas_tol:
            status = "optimal"
            break
        # Certificates from diverging iterates.
        if dobj_y > 0:
            ATyZ = np.sqrt(sum(np.sum((z - B.mat(y)) ** 2) for B, z in zip(blocks, Z)))
            if ATyZ / dobj_y < opts.infeas_tol:
                status, msg = "unbounded", "improving ray found"
                break
        if pobj_x < 0:
            if np.linalg.norm(AX) / -pobj_x < opts.infeas_tol:
                status, msg = "infeasible", "separating certificate found"
                break
        if it == opts.max_iter:
            break

        M = np.zeros((k, k))
        for B, x, zi in zip(blocks, X, Zi):
            a = B.active
            M[np.ix_(a, a)] += B.schur(x, zi)
        M = _sym(M)
        if not np.all(np.isfinite(M)):
            status, msg = "numerical_failure", "non-finite Schur complement"
            break
        fac = None
        reg = 0.0
        dmax = max(np.abs(np.diag(M)).max(initial=0.0), 1e-300)
        for attempt in range(5):
            try:
                fac = la.cho_factor(M + reg * np.eye(k), lower=True)
                break
            except la.LinAlgError:
                reg = dmax * 10.0 ** (-14 + 2 * attempt)
        if fac is None:
            status, msg = "numerical_failure", "Schur complement factorization failed after regularization"
            break

        XRdZi = [x @ r @ zi for x, r, zi in zip(X, Rd, Zi)]

        def direction(RcZi):
            rhs = rp + sum(B.adj(u) for B, u in zip(blocks, RcZi)) - sum(B.adj(u) for B, u in zip(blocks, XRdZi))
            dy = la.cho_solve(fac, rhs)
            dZ = [_sym(r + B.mat(dy)) for B, r in zip(blocks, Rd)]
            dX = [_sym(rz - x @ dz @ zi) for rz, x, dz, zi in zip(RcZi, X, dZ, Zi)]
            return dX, dy, dZ

        def steps(dX, dZ):
            ap = min(_max_step(L, d) for L, d in zip(LX, dX))
            ad = min(_max_step(L, d) for L, d in zip(LZ, dZ))
            return ap, ad

        dXa, dya, dZa = direction([-x for x in X])
        ap, ad = steps(dXa, dZa)
        ap, ad = min(1.0, ap), min(1.0, ad)
        mu_a = sum(np.vdot(x + ap * dx, z + ad * dz) for x, dx, z, dz in zip(X, dXa, Z, dZa)) / n_total
        sigma = min(1.0, max(0.0, mu_a / mu) ** 3) if mu > 0 else 0.0

        RcZi = [sigma * mu * zi - x - dx @ dz @ zi for zi, x, dx, dz in zip(Zi, X, dXa, dZa)]
        dX, dy, dZ = direction(RcZi)
        ap, ad = steps(dX, dZ)
        gamma = 0.9 + 0.09 * min(1.0, ap, ad)
        ap, ad = min(1.0, gamma * ap), min(1.0, gamma * ad)
        X = [x + ap * d for x, d in zip(X, dX)]
        y = y + ad * dy
        Z = [z + ad * d for z, d in zip(Z, dZ)]

        stall = stall + 1 if max(ap, ad) < 1e-8 else 0
        if stall >= 3:
            status, msg = "numerical_failure", "step lengths collapsed"
            break
        if not np.all(np.isfinite(y)):
            status, msg = "numerical_failure", "non-finite iterate"
            break

    t = y if np.all(np.isfinite(y)) else None
    return _result(problem, comp, red, t, status, it, float(gap), float(dobj), float(pinf), float(dinf),
                   msg, history)


def solve(problem: SdpProblem, opts: SolverOptions | None = None, **overrides) -> SdpSolution:
    """Solve ``problem``; keyword overrides replace fields of ``opts``."""
    opts = opts or SolverOptions()
    if overrides:
        opts = SolverOptions(**{**opts.__dict__, **overrides})
    if problem.num_vars == 0:
        raise ValueError("problem has no decision variables")
    if not opts.scale:
        return _ipm(problem, opts)
    scaled, record = scale_problem(problem)
    sol = _ipm(scaled, opts)
    return record.unscale_solution(sol, problem)
