"""Per-step chance SDP: assembly from closed-loop polynomials and gain extraction.

At step k the SDP maximizes the mass ``y_0`` of a slack measure on
(gains, x_k, noise) that is supported where every composed tube polynomial and
input bound is nonnegative and is dominated by ``mu_G x p_x x p_w``.  The gain
measure's first moments become the feedback gains.

Before assembly every variable is affinely normalized (gains to [-1, 1],
states and noises to zero mean and unit spread).  The relaxation is invariant
under invertible affine changes of variables, so this only improves
conditioning.  Variables that no constraint touches are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .distributions import DistributionSpec
from .dynamics import input_polynomials
from .moments import (InsufficientOrderError, LinForm, MomentSequence, RelaxationOrderError,
                      affine_transform, localizing_matrix, localizing_radius, moment_matrix,
                      product_sequence)
from .polynomial import Polynomial
from .sdp import SdpProblem, SdpSolution


class VariableLeakError(ValueError):
    pass


@dataclass
class StepProblem:
    k: int
    order: int
    gain_vars: tuple[str, ...]
    state_vars: tuple[str, ...]
    noise_vars: tuple[str, ...]
    tube_polys: list[Polynomial]
    input_polys: list[Polynomial]
    input_bounds: list[tuple[float | None, float | None]]
    gain_bounds: dict[str, tuple[float, float]]
    state_moments: MomentSequence
    noise_specs: dict[str, DistributionSpec]
    names: dict = field(default_factory=dict)
    state_center: dict = field(default_factory=dict)
    state_scale_cap: dict = field(default_factory=dict)

    def __post_init__(self):
        groups = set(self.gain_vars) | set(self.state_vars) | set(self.noise_vars)
        for label, polys in (("tube", self.tube_polys), ("input", self.input_polys)):
            for p in polys:
                extra = set(p.variables) - groups
                if extra:
                    raise VariableLeakError(f"{label} polynomial uses variables {sorted(extra)} "
                                            "outside the gain/state/noise groups")
        for p in self.input_polys:
            leak = set(p.variables) & set(self.noise_vars)
            if leak:
                raise VariableLeakError(f"input polynomial depends on noises {sorted(leak)}")
        missing = [n for n in self.noise_vars if n not in self.noise_specs]
        if missing:
            raise ValueError(f"no distribution for noises {missing}")
        if tuple(self.state_moments.vars) != tuple(self.state_vars):
            raise ValueError("state moments must be over the declared state order")
        if self.state_moments.order < self.required_state_order:
            raise InsufficientOrderError(
                f"step {self.k}: state moments up to order {self.required_state_order} required, "
                f"only {self.state_moments.order} supplied")

    @property
    def required_state_order(self) -> int:
        return 2 * self.order

    def constraint_polys(self) -> list[tuple[str, Polynomial]]:
        out = [(f"tube[{j}]", p) for j, p in enumerate(self.tube_polys)]
        for i, (u, (lo, hi)) in enumerate(zip(self.input_polys, self.input_bounds)):
            if lo is not None:
                out.append((f"input[{i}]-lower", u - lo))
            if hi is not None:
                out.append((f"input[{i}]-upper", hi - u))
        return out

    def with_order(self, order: int) -> "StepProblem":
        return StepProblem(self.k, order, self.gain_vars, self.state_vars, self.noise_vars, self.tube_polys,
                           self.input_polys, self.input_bounds, self.gain_bounds, self.state_moments,
                           self.noise_specs, dict(self.names), dict(self.state_center),
                           dict(self.state_scale_cap))

    @cached_property
    def layout(self) -> "Layout":
        return Layout.of(self)

    def min_order(self) -> int:
        """Smallest relaxation order accepted by every localizer."""
        polys = [p for _, p in self.layout.constraints]
        return max([1] + [localizing_radius(p) for p in polys])


@dataclass
class Layout:
    """Active variables, their affine normalization and the normalized constraints."""

    gains: tuple[str, ...]
    states: tuple[str, ...]
    noises: tuple[str, ...]
    shift: dict[str, float]
    scale: dict[str, float]
    constraints: list[tuple[str, Polynomial]]
    trivial_negative: list[str]

    @property
    def joint(self) -> tuple[str, ...]:
        return self.gains + self.states + self.noises

    @classmethod
    def of(cls, sp: StepProblem) -> "Layout":
        raw = sp.constraint_polys()
        active = set()
        for _, p in raw:
            active |= set(p.variables)
        fixed_gains = {g: lo for g, (lo, hi) in sp.gain_bounds.items() if lo == hi}
        gains = tuple(g for g in sp.gain_vars if g in active and g not in fixed_gains)
        states = tuple(s for s in sp.state_vars if s in active)
        noises = tuple(w for w in sp.noise_vars if w in active)

        shift: dict[str, float] = {}
        scale: dict[str, float] = {}
        for g in gains:
            lo, hi = sp.gain_bounds[g]
            shift[g], scale[g] = 0.5 * (lo + hi), 0.5 * (hi - lo)
        if states:
            marg = sp.state_moments.marginal(states).truncate(2)
            mean = marg.mean()
            for i, s in enumerate(states):
                e2 = [0] * len(states)
                e2[i] = 2
                c = float(sp.state_center.get(s, mean[i]))
                spread = float(marg[tuple(e2)]) - 2 * c * mean[i] + c * c
                shift[s] = c
                scale[s] = float(np.sqrt(spread)) if spread > 1e-20 else 1.0
                cap = sp.state_scale_cap.get(s)
                if cap is not None and 0 < cap < scale[s]:
                    # escaped mass inflates the spread; the tube sets the relevant length
                    scale[s] = float(cap)
        for w in noises:
            spec = sp.noise_specs[w]
            shift[w] = spec.mean
            scale[w] = spec.std if spec.std > 1e-10 else 1.0

        binds = {v: Polynomial.constant(shift[v]) + Polynomial.var(v) * scale[v] for v in shift}
        binds.update({g: Polynomial.constant(v) for g, v in fixed_gains.items()})
        constraints = []
        trivial_negative = []
        for name, p in raw:
            q = p.substitute(binds) if binds else p
            peak = max((abs(c) for c in q.terms.values()), default=0.0)
            if q.degree <= 0:
                if q.constant_term() >= 0:
                    continue
                trivial_negative.append(name)
            constraints.append((name, q * (1.0 / peak) if peak > 0 else q))
        return cls(gains, states, noises, shift, scale, constraints, trivial_negative)

    def to_raw(self, var: str, value: float) -> float:
        return self.shift[var] + self.scale[var] * value


def compose_constraints(scenario, k: int, closed_loop: Sequence[Polynomial], state_moments: MomentSequence,
                        order: int | None = None) -> StepProblem:
    """Compose the step-(k+1) tube with the closed-loop map ``x(k+1) = closed_loop(x(k), w(k), gains)``."""
    model = scenario.model
    if len(closed_loop) != model.n:
        raise ValueError(f"expected {model.n} closed-loop polynomials, got {len(closed_loop)}")
    order = scenario.order if order is None else order
    binds = dict(zip(model.state_vars, closed_loop))
    tube = [p.substitute(binds) for p in scenario.tube_at(k + 1)]
    x_nom = scenario.nominal_state(k)
    inputs = input_polynomials(scenario.law, scenario.u_nom[k], x_nom)
    return StepProblem(
        k=k, order=order, gain_vars=scenario.law.gains, state_vars=model.state_vars,
        noise_vars=model.noise_vars, tube_polys=tube, input_polys=inputs,
        input_bounds=list(scenario.law.input_bounds), gain_bounds=scenario.law.gain_bounds(),
        state_moments=state_moments, noise_specs=scenario.uncertainty.noise_at(k),
        state_center=dict(x_nom), state_scale_cap=scenario.tube_scale(k),
    )


def build_sdp(sp: StepProblem) -> SdpProblem:
    lay = sp.layout
    d = sp.order
    for name, p in lay.constraints:
        r = localizing_radius(p)
        if r > d:
            raise RelaxationOrderError(f"step {sp.k}: localizer {name} has degree {p.degree}", r)

    joint = lay.joint
    y = MomentSequence.symbolic(joint, 2 * d, "y")
    blocks, names = [moment_matrix(y, d)], ["moment"]
    for name, p in lay.constraints:
        blocks.append(localizing_matrix(y, p, d))
        names.append(name)

    parts = []
    equalities = []
    if lay.gains:
        yG = MomentSequence.symbolic(lay.gains, 2 * d, "yG")
        blocks.append(moment_matrix(yG, d))
        names.append("gain-moment")
        for g in lay.gains:
            # normalized gain lies in [-1, 1]
            h = Polynomial.var(g)
            for tag, p in (("lower", h + 1.0), ("upper", 1.0 - h), ("width", 1.0 - h * h)):
                blocks.append(localizing_matrix(yG, p, d))
                names.append(f"gainbox[{g}]-{tag}")
        parts.append(yG)
        equalities.append((LinForm.var(("yG", (0,) * len(lay.gains))), 1.0))
    if lay.states:
        yx = sp.state_moments.marginal(lay.states).truncate(2 * d)
        parts.append(affine_transform(yx, [lay.shift[s] for s in lay.states], [lay.scale[s] for s in lay.states]))
    if lay.noises:
        yw = MomentSequence.from_distributions(lay.noises, [sp.noise_specs[w] for w in lay.noises], 2 * d)
        parts.append(affine_transform(yw, [lay.shift[w] for w in lay.noises], [lay.scale[w] for w in lay.noises]))
    if parts:
        known = product_sequence(parts)
    else:
        known = MomentSequence((), 2 * d, {(): 1.0})
    blocks.append(moment_matrix(known - y, d))
    names.append("domination")

    var_ids = tuple(("y", a) for a in y.entries)
    if lay.gains:
        var_ids += tuple(("yG", a) for a in yG.entries)
    objective = LinForm.var(("y", (0,) * len(joint)))
    return SdpProblem(var_ids, objective, blocks, equalities, names)


@dataclass
class StepResult:
    k: int
    order: int
    gains: dict[str, float]
    objective: float
    bound: float
    rank: int
    gain_eigenvalues: list[float]
    status: str
    clamped: list[str]
    sdp_status: str
    block_min_eigs: dict[str, float]
    iterations: int
    inert_gains: list[str] = field(default_factory=list)

    def gains_for(self, law) -> list[list[float]]:
        return [[self.gains[t.gain] for t in ts] for ts in law.terms]


def _inert_default(lo: float, hi: float) -> float:
    return 0.0 if lo <= 0.0 <= hi else 0.5 * (lo + hi)


def probability_bound(sol: SdpSolution) -> float:
    """Raw objective clipped into [0, 1]; the raw value stays on the solution."""
    return float(min(max(sol.objective, 0.0), 1.0))


def extract_gains(sol: SdpSolution, sp: StepProblem, rank_tol: float = 1e-4, problem: SdpProblem | None = None) -> StepResult:
    if sol.status != "optimal":
        raise ValueError(f"cannot extract gains from a {sol.status} solution")
    lay = sp.layout
    gains: dict[str, float] = {}
    clamped: list[str] = []
    inert: list[str] = []
    eigs: list[float] = []
    rank = 1
    if lay.gains:
        yG = MomentSequence.symbolic(lay.gains, 2 * sp.order, "yG").evaluate(sol.values)
        M = moment_matrix(yG, sp.order).evaluate()
        eigs = sorted(np.linalg.eigvalsh(M).tolist(), reverse=True)
        lam_max = max(eigs[0], 0.0)
        rank = int(sum(e > rank_tol * lam_max for e in eigs)) if lam_max > 0 else 0
        means = yG.mean()
        for g, m in zip(lay.gains, means):
            gains[g] = lay.to_raw(g, float(m))
    for g in sp.gain_vars:
        lo, hi = sp.gain_bounds[g]
        if g not in gains:
            gains[g] = lo if lo == hi else _inert_default(lo, hi)
            if lo != hi:
                inert.append(g)
        v = gains[g]
        if v < lo or v > hi:
            gains[g] = float(min(max(v, lo), hi))
            clamped.append(g)
    status = "rank1_clean" if rank == 1 else "rank1_forced"
    names = problem.block_names if problem is not None else [f"block{i}" for i in range(len(sol.block_min_eigs))]
    return StepResult(
        k=sp.k, order=sp.order, gains=gains, objective=float(sol.objective), bound=probability_bound(sol),
        rank=rank, gain_eigenvalues=eigs, status=status, clamped=clamped, sdp_status=sol.status,
        block_min_eigs=dict(zip(names, sol.block_min_eigs)), iterations=sol.iterations, inert_gains=inert,
    )


def failed_result(sp: StepProblem, sol: SdpSolution | None, problem: SdpProblem | None = None) -> StepResult:
    names = problem.block_names if problem is not None else []
    eigs = dict(zip(names, sol.block_min_eigs)) if sol is not None else {}
    return StepResult(sp.k, sp.order, {}, float("nan") if sol is None else float(sol.objective), float("nan"),
                      0, [], "failed", [], "none" if sol is None else sol.status, eigs,
                      0 if sol is None else sol.iterations)
