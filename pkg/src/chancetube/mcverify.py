"""Monte Carlo rollouts of the closed loop under a gain schedule.

Rollouts use the original update expressions (trigonometric ones included)
unless ``surrogate=True``.  Every (step, variable) pair draws from its own
Philox stream spawned from the seed, so results do not depend on how the
batch is chunked.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .distributions import sample
from .moments import MomentSequence
from .polynomial import exponent_basis

FORMAT_VERSION = 1


def _stream(seed: int, k: int, slot: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(k, slot))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class RolloutBatch:
    seed: int
    n: int
    state_vars: tuple[str, ...]
    input_vars: tuple[str, ...]
    states: np.ndarray  # (T+1, N, n)
    inputs: np.ndarray  # (T, N, m)
    contained: np.ndarray  # (T, N) for k = 1..T
    clamp_counts: np.ndarray  # (T, m)
    surrogate: bool = False
    comparison: list[dict] = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return self.contained.shape[0]

    @property
    def per_step_rate(self) -> np.ndarray:
        return self.contained.mean(axis=1)

    @property
    def per_step_se(self) -> np.ndarray:
        p = self.per_step_rate
        return np.sqrt(p * (1 - p) / self.n)

    @property
    def joint(self) -> np.ndarray:
        return np.logical_and.reduce(self.contained, axis=0) if self.horizon else np.ones(self.n, bool)

    @property
    def joint_rate(self) -> float:
        return float(self.joint.mean())

    @property
    def joint_se(self) -> float:
        p = self.joint_rate
        return float(np.sqrt(p * (1 - p) / self.n))

    def summary(self) -> dict:
        out = {
            "format_version": FORMAT_VERSION,
            "seed": self.seed,
            "rollouts": self.n,
            "surrogate_dynamics": self.surrogate,
            "joint_rate": self.joint_rate,
            "joint_se": self.joint_se,
            "per_step": [
                {"k": k + 1, "rate": float(r), "se": float(s)}
                for k, (r, s) in enumerate(zip(self.per_step_rate, self.per_step_se))
            ],
            "clamp_counts": {u: [int(c) for c in self.clamp_counts[:, i]] for i, u in enumerate(self.input_vars)},
        }
        if self.comparison:
            out["bound_vs_rate"] = self.comparison
        return out

    def write_summary(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2) + "\n")

    def write_csv(self, path: str | Path) -> None:
        """Rows ``k,rollout_id,x1..xn,u1..um,contained``; inputs are empty at the final step."""
        T, N = self.horizon, self.n
        cols = ["k", "rollout_id", *self.state_vars, *self.input_vars, "contained"]
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            ids = np.arange(N)
            for k in range(T + 1):
                block = [np.full(N, k), ids]
                block += [self.states[k, :, i] for i in range(len(self.state_vars))]
                if k < T:
                    block += [self.inputs[k, :, i] for i in range(len(self.input_vars))]
                contained = np.ones(N, bool) if k == 0 else self.contained[k - 1]
                lines = []
                for row in zip(*block, contained):
                    head = f"{int(row[0])},{int(row[1])}," + ",".join(repr(float(v)) for v in row[2:-1])
                    if k == T:
                        head += "," * len(self.input_vars)
                    lines.append(f"{head},{int(row[-1])}\n")
                fh.writelines(lines)


def input_values(law, u_nom: Sequence[float], x_nom: Mapping[str, float], gains: Mapping[str, float],
                 states: Mapping[str, np.ndarray]) -> list[np.ndarray]:
    out = []
    for ts, u0 in zip(law.terms, u_nom):
        u = np.full(np.shape(next(iter(states.values()))), float(u0))
        for t in ts:
            term = np.ones_like(u)
            for v, e in t.monomial.exponents.items():
                term = term * (states[v] - x_nom[v]) ** e
            u = u + gains[t.gain] * term
        out.append(u)
    return out


def rollout(scenario, gains: Sequence[Mapping[str, float]], n: int, seed: int, surrogate: bool = False) -> RolloutBatch:
    """Simulate ``n`` closed-loop trajectories over the horizon with clamped inputs."""
    if n < 1:
        raise ValueError("number of rollouts must be positive")
    T = scenario.horizon
    if len(gains) < T:
        raise ValueError(f"gain schedule covers {len(gains)} steps, horizon is {T}")
    model, law = scenario.model, scenario.law
    sv, iv, nv = model.state_vars, model.input_vars, model.noise_vars
    states = np.empty((T + 1, n, len(sv)))
    inputs = np.empty((T, n, len(iv)))
    contained = np.empty((T, n), dtype=bool)
    clamps = np.zeros((T, len(iv)), dtype=np.int64)

    x = {}
    for i, s in enumerate(sv):
        x[s] = np.asarray(sample(scenario.uncertainty.initial[s], _stream(seed, 0, i), n), dtype=float)
        states[0, :, i] = x[s]
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(T):
            us = input_values(law, scenario.u_nom[k], scenario.nominal_state(k), gains[k], x)
            point = dict(x)
            for i, (u, (lo, hi)) in enumerate(zip(us, law.input_bounds)):
                clipped = np.clip(u, -np.inf if lo is None else lo, np.inf if hi is None else hi)
                clamps[k, i] = int(np.count_nonzero(clipped != u))
                point[iv[i]] = clipped
                inputs[k, :, i] = clipped
            noise = scenario.uncertainty.noise_at(k)
            for j, w in enumerate(nv):
                point[w] = np.asarray(sample(noise[w], _stream(seed, k + 1, len(sv) + j), n), dtype=float)
            if surrogate:
                polys = model.polynomialize(scenario.nominal_point(k), scenario.taylor_degree)
                nxt = [np.broadcast_to(np.asarray(p.eval(point), dtype=float), (n,)) for p in polys]
            else:
                nxt = [np.broadcast_to(np.asarray(v, dtype=float), (n,)) for v in model.step(point)]
            x = {s: np.array(v) for s, v in zip(sv, nxt)}
            for i, s in enumerate(sv):
                states[k + 1, :, i] = x[s]
            ok = scenario.contained(k + 1, x)
            finite = np.logical_and.reduce([np.isfinite(x[s]) for s in sv])
            contained[k] = ok & finite
    return RolloutBatch(seed, n, tuple(sv), tuple(iv), states, inputs, contained, clamps, surrogate)


def empirical_moments(batch: RolloutBatch, k: int, up_to: int) -> tuple[MomentSequence, dict]:
    """Sample raw moments of ``x(k)`` with jackknife standard errors.

    For a sample mean the leave-one-out jackknife variance has the closed
    form ``s^2 / N``, which is what is evaluated here.
    """
    if not 0 <= k <= batch.horizon:
        raise IndexError(f"k must lie in 0..{batch.horizon}")
    X = batch.states[k]
    n = len(batch.state_vars)
    entries, se = {}, {}
    with np.errstate(over="ignore", invalid="ignore"):
        for a in exponent_basis(n, up_to):
            v = np.ones(batch.n)
            for i, e in enumerate(a):
                if e:
                    v = v * X[:, i] ** e
            entries[a] = float(np.mean(v))
            se[a] = float(np.std(v, ddof=1) / np.sqrt(batch.n)) if batch.n > 1 else float("inf")
    return MomentSequence(batch.state_vars, up_to, entries), se
