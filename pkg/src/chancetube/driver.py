"""Sequential synthesis loop and verification.

For each step k: polynomialize the dynamics at the nominal point, compose the
next tube with the closed loop, solve the chance SDP, extract gains, then
propagate the state moments with the numeric gains.  The loop is strictly
sequential because step k+1 needs the moments produced under step k's gains.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .chance import StepProblem, StepResult, build_sdp, compose_constraints, extract_gains, failed_result
from .dynamics import closed_loop_step
from .mcverify import RolloutBatch, rollout
from .moments import InsufficientOrderError, RelaxationOrderError, moment_matrix
from .propagation import BudgetExceeded, Propagator, StateMoments
from .sdp import SolverOptions, export_sdpa, read_result, solve

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class HandshakePending(RuntimeError):
    """External solver mode: an SDPA file was written and its result file is not there yet."""

    def __init__(self, problem_path: Path, result_path: Path, k: int):
        self.problem_path = problem_path
        self.result_path = result_path
        self.k = k
        super().__init__(f"step {k}: solve {problem_path} and write the solution to {result_path}")


@dataclass
class Attempt:
    order: int
    sdp_status: str
    objective: float
    rank: int | None
    extraction: str
    iterations: int
    message: str = ""


@dataclass
class StepRecord:
    k: int
    result: StepResult
    propagation: str
    truncated: bool
    closure_order: int | None
    closure: str | None
    discarded: float
    state_moment_min_eig: float
    attempts: list[Attempt]
    seconds: float

    def to_json(self, timing: bool) -> dict:
        r = self.result
        out = {
            "k": self.k,
            "order": r.order,
            "gains": r.gains,
            "bound": r.bound,
            "objective": r.objective,
            "rank": r.rank,
            "extraction": r.status,
            "sdp_status": r.sdp_status,
            "iterations": r.iterations,
            "clamped_gains": r.clamped,
            "inert_gains": r.inert_gains,
            "lambda_min": r.block_min_eigs,
            "gain_moment_eigenvalues": r.gain_eigenvalues,
            "propagation": self.propagation,
            "truncated": self.truncated,
            "closure_order": self.closure_order,
            "closure": self.closure,
            "discarded_mass": self.discarded,
            "state_moment_min_eig": self.state_moment_min_eig,
            "attempts": [a.__dict__ for a in self.attempts],
        }
        if timing:
            out["seconds"] = self.seconds
        return out


@dataclass
class GainSchedule:
    scenario: str
    steps: list[StepRecord] = field(default_factory=list)
    complete: bool = False
    failure: str | None = None
    events: list[str] = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    @property
    def gains(self) -> list[dict[str, float]]:
        return [s.result.gains for s in self.steps if s.result.status != "failed"]

    @property
    def bounds(self) -> list[float]:
        return [s.result.bound for s in self.steps]

    def report(self, timing: bool = False) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "generator": f"chancetube {__version__}",
            "scenario": self.scenario,
            "settings": self.settings,
            "complete": self.complete,
            "failure": self.failure,
            "events": self.events,
            "steps": [s.to_json(timing) for s in self.steps],
        }

    def gains_document(self) -> dict:
        return {"format_version": FORMAT_VERSION, "scenario": self.scenario, "gains": self.gains}

    def write(self, report_path: str | Path, gains_path: str | Path | None = None, timing: bool = False) -> None:
        Path(report_path).write_text(json.dumps(self.report(timing), indent=2) + "\n")
        if gains_path is not None:
            Path(gains_path).write_text(json.dumps(self.gains_document(), indent=2) + "\n")


def load_gains(path: str | Path) -> list[dict[str, float]]:
    doc = json.loads(Path(path).read_text())
    gains = doc["gains"] if isinstance(doc, dict) else doc
    if not isinstance(gains, list) or not all(isinstance(g, dict) for g in gains):
        raise ValueError("gains file must hold a list of {gain: value} mappings under 'gains'")
    return [{str(k): float(v) for k, v in g.items()} for g in gains]


def _solve_step(sp: StepProblem, opts: SolverOptions, external_dir: Path | None, stem: str):
    problem = build_sdp(sp)
    if external_dir is None:
        return problem, solve(problem, opts)
    external_dir.mkdir(parents=True, exist_ok=True)
    dat = external_dir / f"{stem}.dat-s"
    res = external_dir / f"{stem}.result"
    text = export_sdpa(problem)
    if not dat.exists() or dat.read_text() != text:
        dat.write_text(text)
    if not res.exists():
        raise HandshakePending(dat, res, sp.k)
    return problem, read_result(res.read_text(), problem)


def synthesize(scenario, order: int | None = None, max_order: int | None = None,
               opts: SolverOptions | None = None, external_dir: str | Path | None = None,
               strategy: str | None = None) -> GainSchedule:
    """Run the sequential synthesis loop; failures yield a partial schedule with a diagnostic."""
    opts = opts or SolverOptions()
    d0 = order or scenario.order
    d_max = max(d0, max_order or scenario.max_order or d0)
    strategy = strategy or scenario.propagation
    ext = Path(external_dir) if external_dir is not None else None
    model, law = scenario.model, scenario.law
    prop = Propagator(model.state_vars, scenario.uncertainty, 2 * d_max, strategy,
                      degree_budget=scenario.moment_budget, term_budget=scenario.term_budget)
    sched = GainSchedule(scenario.name, settings={
        "order": d0, "max_order": d_max, "taylor_degree": scenario.taylor_degree, "propagation": strategy,
        "rank_tol": scenario.rank_tol, "solver": "external" if ext else "embedded",
        "gap_tol": opts.gap_tol, "feas_tol": opts.feas_tol, "max_iter": opts.max_iter,
    })

    for k in range(scenario.horizon):
        t0 = time.perf_counter()
        update = model.polynomialize(scenario.nominal_point(k), scenario.taylor_degree)
        x_nom = scenario.nominal_state(k)
        sym_loop = closed_loop_step(model, update, law, x_nom, scenario.u_nom[k])
        sm = prop.moments()
        lam = float(np.linalg.eigvalsh(moment_matrix(sm.seq, sm.order // 2).evaluate())[0])
        attempts: list[Attempt] = []
        result = None
        d = d0
        sp = None
        while True:
            try:
                sp = compose_constraints(scenario, k, sym_loop, sm.seq, order=d)
                if sp.min_order() > d:
                    need = sp.min_order()
                    if need <= d_max:
                        attempts.append(Attempt(d, "skipped", float("nan"), None, "failed", 0,
                                                f"localizer needs order {need}"))
                        d = need
                        continue
                    raise RelaxationOrderError("constraints need a higher relaxation order", need)
                problem, sol = _solve_step(sp, opts, ext, f"{scenario.name}_k{k}_d{d}")
            except (RelaxationOrderError, InsufficientOrderError) as exc:
                sched.failure = f"step {k}: {exc}"
                break
            if sol.status != "optimal":
                attempts.append(Attempt(d, sol.status, sol.objective, None, "failed", sol.iterations, sol.message))
                worst = min(zip(sol.block_min_eigs, problem.block_names), default=(float("nan"), "-"))
                sched.failure = (f"step {k}: SDP at order {d} ended {sol.status} ({sol.message}); "
                                 f"smallest block eigenvalue {worst[0]:.3g} in block {worst[1]}")
                result = failed_result(sp, sol, problem)
                break
            res = extract_gains(sol, sp, scenario.rank_tol, problem)
            attempts.append(Attempt(d, sol.status, sol.objective, res.rank, res.status, sol.iterations, sol.message))
            result = res
            if res.status == "rank1_forced" and d < d_max:
                d += 1
                continue
            break
        if sched.failure is not None:
            if result is not None:
                sched.steps.append(StepRecord(k, result, sm.tag, sm.truncated, sm.closure_order, sm.closure, sm.discarded, lam, attempts,
                                              time.perf_counter() - t0))
            break
        gains = result.gains
        numeric_loop = closed_loop_step(model, update, law, x_nom, scenario.u_nom[k], gains)
        try:
            prop.advance(numeric_loop, gains, scenario.tube_at(k) if k >= 1 else None)
        except BudgetExceeded as exc:
            sched.failure = f"step {k}: propagation over budget ({exc})"
        sched.steps.append(StepRecord(k, result, sm.tag, sm.truncated, sm.closure_order, sm.closure, sm.discarded, lam, attempts,
                                      time.perf_counter() - t0))
        log.info("step %d: order %d bound %.6f gains %s (%s)", k, result.order, result.bound, gains, result.status)
        if sched.failure is not None:
            break
    sched.events = list(prop.events)
    sched.complete = sched.failure is None and len(sched.steps) == scenario.horizon
    return sched


def verify(scenario, schedule: GainSchedule | Sequence[dict], n: int, seed: int,
           surrogate: bool = False) -> RolloutBatch:
    """Monte Carlo check of a schedule, with the per-step bound-vs-rate table when bounds are known."""
    gains = schedule.gains if isinstance(schedule, GainSchedule) else list(schedule)
    batch = rollout(scenario, gains, n, seed, surrogate)
    if isinstance(schedule, GainSchedule):
        rates, ses = batch.per_step_rate, batch.per_step_se
        for rec in schedule.steps:
            k = rec.k
            bound = rec.result.bound
            batch.comparison.append({
                "k": k + 1, "bound": bound, "rate": float(rates[k]), "se": float(ses[k]),
                "consistent": bool(bound >= rates[k] - 3 * ses[k]),
            })
    return batch


def propagate(scenario, gains: Sequence[Mapping[str, float]], k: int, up_to: int,
              strategy: str | None = None) -> StateMoments:
    """Moments of ``x(k)`` up to ``up_to`` under a gain schedule, as the synthesis loop computes them."""
    if not 0 <= k <= scenario.horizon:
        raise IndexError(f"step {k} outside 0..{scenario.horizon}")
    if len(gains) < k:
        raise ValueError(f"moments at step {k} need gains for {k} steps, {len(gains)} given")
    model, law = scenario.model, scenario.law
    prop = Propagator(model.state_vars, scenario.uncertainty, up_to, strategy or scenario.propagation,
                      degree_budget=scenario.moment_budget, term_budget=scenario.term_budget)
    for j in range(k):
        update = model.polynomialize(scenario.nominal_point(j), scenario.taylor_degree)
        loop = closed_loop_step(model, update, law, scenario.nominal_state(j), scenario.u_nom[j], gains[j])
        prop.advance(loop, gains[j], scenario.tube_at(j) if j >= 1 else None)
    return prop.current
