"""Scenario data model and the YAML scenario-file loader.

A scenario file has the sections ``system``, ``uncertainty``, ``nominal``,
``tube``, ``feedback`` and ``solve``; see ``data/ex1.yaml`` for a complete
example.  Expression strings use the dynamics grammar, distributions use
``kind(params)``.  Errors carry the file line and column of the offending
value.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

from .distributions import DistributionSpec, UncertaintyModel, parse_distribution
from .dynamics import FeedbackLaw, FeedbackTerm, ParseError, SystemModel, parse_expression
from .polynomial import Monomial, Polynomial, parse_polynomial

FORMAT_VERSION = 1
STRATEGIES = ("auto", "exact", "one_step")


class ScenarioError(ValueError):
    """Input error in a scenario; ``problems`` lists every issue found."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class Scenario:
    name: str
    model: SystemModel
    uncertainty: UncertaintyModel
    horizon: int
    x_nom: np.ndarray  # (T+1, n)
    u_nom: np.ndarray  # (T, m)
    tube: list[list[Polynomial]]  # tube[k-1] for k = 1..T
    law: FeedbackLaw
    order: int = 2
    max_order: int | None = None
    taylor_degree: int = 3
    propagation: str = "auto"
    rank_tol: float = 1e-4
    moment_budget: int = 24
    term_budget: int = 200_000
    box: dict | None = None  # {"radius": (T, n) array, "center": (T, n)} for box tubes

    def __post_init__(self):
        self.x_nom = np.atleast_2d(np.asarray(self.x_nom, dtype=float))
        self.u_nom = np.asarray(self.u_nom, dtype=float).reshape(self.horizon, len(self.model.input_vars))
        problems = []
        if self.horizon < 1:
            problems.append("horizon must be at least 1")
        if self.x_nom.shape != (self.horizon + 1, self.model.n):
            problems.append(f"nominal states need shape {(self.horizon + 1, self.model.n)}, got {self.x_nom.shape}")
        if len(self.tube) != self.horizon:
            problems.append(f"tube must be given for k = 1..{self.horizon}, got {len(self.tube)} steps")
        if self.order < 1:
            problems.append("relaxation order must be at least 1")
        if self.max_order is not None and self.max_order < self.order:
            problems.append("max_order must be >= order")
        if self.propagation not in STRATEGIES:
            problems.append(f"propagation must be one of {STRATEGIES}")
        if tuple(self.law.inputs) != tuple(self.model.input_vars):
            problems.append(f"feedback inputs {self.law.inputs} differ from system inputs {self.model.input_vars}")
        states = set(self.model.state_vars)
        for k, polys in enumerate(self.tube, start=1):
            for p in polys:
                extra = set(p.variables) - states
                if extra:
                    problems.append(f"tube at k={k} uses non-state variables {sorted(extra)}")
        for ts in self.law.terms:
            for t in ts:
                extra = set(t.monomial.variables) - states
                if extra:
                    problems.append(f"feedback monomial for {t.gain} uses non-state variables {sorted(extra)}")
        for g in set(self.law.gains) & (states | set(self.model.input_vars) | set(self.model.noise_vars)):
            problems.append(f"gain name {g!r} collides with a system variable")
        try:
            self.uncertainty.initial_specs(self.model.state_vars)
        except KeyError as exc:
            problems.append(str(exc.args[0]))
        missing = [w for w in self.model.noise_vars if w not in self.uncertainty.noise]
        if missing:
            problems.append(f"no distribution for noises {missing}")
        if problems:
            raise ScenarioError(problems)

    @property
    def T(self) -> int:
        return self.horizon

    def tube_at(self, k: int) -> list[Polynomial]:
        if not 1 <= k <= self.horizon:
            raise IndexError(f"tube defined for k = 1..{self.horizon}, not {k}")
        return self.tube[k - 1]

    def nominal_state(self, k: int) -> dict[str, float]:
        return dict(zip(self.model.state_vars, map(float, self.x_nom[k])))

    def tube_scale(self, k: int) -> dict[str, float]:
        """Half-widths of the box tube at step ``k`` (empty at k = 0 or for polynomial tubes)."""
        if self.box is None or k < 1:
            return {}
        rad = self.box["radius"][k - 1]
        return {s: float(r) for s, r in zip(self.model.state_vars, rad) if np.isfinite(r)}

    def nominal_point(self, k: int) -> dict[str, float]:
        """Taylor center at step k: nominal state and input; noises about zero."""
        pt = self.nominal_state(k)
        pt.update(zip(self.model.input_vars, map(float, self.u_nom[k])))
        return pt

    def tube_violations(self) -> list[str]:
        """Steps where the nominal state is not strictly inside the tube."""
        out = []
        for k in range(1, self.horizon + 1):
            pt = self.nominal_state(k)
            for j, p in enumerate(self.tube_at(k)):
                if not p.eval(pt) > 0:
                    out.append(f"nominal state at k={k} not strictly inside tube polynomial {j}")
        return out

    def contained(self, k: int, states: Mapping[str, np.ndarray]) -> np.ndarray:
        """Vectorized tube membership with ``>= 0`` for every tube polynomial."""
        ok = None
        for p in self.tube_at(k):
            v = np.asarray(p.eval(states)) >= 0
            ok = v if ok is None else ok & v
        if ok is None:
            return np.ones(np.shape(next(iter(states.values()))), dtype=bool)
        return ok


# ---------------------------------------------------------------------------
# YAML loading with source positions


class _Located(str):
    line: int
    column: int
    quoted: bool


class _Loader(yaml.SafeLoader):
    pass


def _construct_str(loader, node):
    s = _Located(loader.construct_scalar(node))
    s.line = node.start_mark.line + 1
    s.column = node.start_mark.column + 1
    s.quoted = node.style in ("'", '"')
    return s


_Loader.add_constructor("tag:yaml.org,2002:str", _construct_str)


def _where(value) -> str:
    if isinstance(value, _Located):
        return f"line {value.line}, column {value.column}"
    return "unknown position"


class _Collector:
    def __init__(self):
        self.problems: list[str] = []

    def expr(self, text, what: str):
        try:
            return parse_expression(str(text))
        except ParseError as exc:
            pos = exc.position
            loc = _where(text)
            if isinstance(text, _Located):
                loc = f"line {text.line}, column {text.column + (pos or 0) + (1 if _quoted(text) else 0)}"
            self.problems.append(f"{what}: {exc.message} ({loc})")
            return None

    def poly(self, text, what: str):
        try:
            return parse_polynomial(str(text))
        except ParseError as exc:
            loc = _where(text)
            if isinstance(text, _Located):
                loc = f"line {text.line}, column {text.column + (exc.position or 0) + (1 if _quoted(text) else 0)}"
            self.problems.append(f"{what}: {exc.message} ({loc})")
            return None

    def dist(self, text, what: str) -> DistributionSpec | None:
        try:
            return parse_distribution(str(text))
        except ValueError as exc:
            self.problems.append(f"{what}: {exc} ({_where(text)})")
            return None

    def need(self, mapping: Mapping, key: str, what: str, kind=None):
        if not isinstance(mapping, Mapping) or key not in mapping:
            self.problems.append(f"missing {what}")
            return None
        v = mapping[key]
        if kind is not None and not isinstance(v, kind):
            self.problems.append(f"{what} must be a {getattr(kind, '__name__', kind)}")
            return None
        return v


def _quoted(s: _Located) -> bool:
    # start_mark points at the opening quote of a quoted scalar
    return getattr(s, "quoted", False)


def _series(value, length: int, what: str, col: _Collector) -> list[float] | None:
    if isinstance(value, (int, float)):
        return [float(value)] * length
    if not isinstance(value, list) or len(value) != length:
        col.problems.append(f"{what} must be a number or a list of {length} numbers")
        return None
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError):
        col.problems.append(f"{what} must contain numbers")
        return None


def _bounds(value, what: str, col: _Collector, allow_none: bool) -> tuple | None:
    if value is None and allow_none:
        return (None, None)
    if not isinstance(value, list) or len(value) != 2:
        col.problems.append(f"{what} must be a [lower, upper] pair")
        return None
    out = []
    for v in value:
        if v is None and allow_none:
            out.append(None)
            continue
        try:
            out.append(float(v))
        except (TypeError, ValueError):
            col.problems.append(f"{what} entries must be numbers{' or null' if allow_none else ''}")
            return None
    return tuple(out)


def scenario_from_dict(doc: Mapping[str, Any], name: str = "scenario") -> Scenario:
    col = _Collector()
    if not isinstance(doc, Mapping):
        raise ScenarioError(["scenario document must be a mapping"])
    version = doc.get("format_version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        col.problems.append(f"unsupported format_version {version!r} (expected {FORMAT_VERSION})")
    known = {"format_version", "name", "system", "uncertainty", "nominal", "tube", "feedback", "solve"}
    for key in doc:
        if key not in known:
            col.problems.append(f"unknown section {key!r}")
    name = str(doc.get("name", name))

    system = col.need(doc, "system", "section 'system'", Mapping) or {}
    states = [str(s) for s in system.get("states", [])] if system else []
    inputs = [str(s) for s in system.get("inputs", [])] if system else []
    noises = [str(s) for s in system.get("noises", [])] if system else []
    if system and not states:
        col.problems.append("system.states must list at least one state")
    update_doc = system.get("update", {}) if system else {}
    updates = []
    if not isinstance(update_doc, Mapping):
        col.problems.append("system.update must map each state to an expression")
        update_doc = {}
    for s in states:
        if s not in update_doc:
            col.problems.append(f"system.update has no expression for state {s!r}")
            continue
        updates.append(col.expr(update_doc[s], f"system.update.{s}"))
    for s in update_doc:
        if s not in states:
            col.problems.append(f"system.update names unknown state {s!r}")
    dt = float(system.get("dt", 1.0)) if system else 1.0

    unc = col.need(doc, "uncertainty", "section 'uncertainty'", Mapping) or {}
    initial = {str(k): col.dist(v, f"uncertainty.initial.{k}") for k, v in (unc.get("initial") or {}).items()}
    noise = {str(k): col.dist(v, f"uncertainty.noise.{k}") for k, v in (unc.get("noise") or {}).items()}
    overrides = {}
    for k, spec in (unc.get("noise_overrides") or {}).items():
        overrides[int(k)] = {str(w): col.dist(v, f"uncertainty.noise_overrides.{k}.{w}") for w, v in spec.items()}

    nominal = col.need(doc, "nominal", "section 'nominal'", Mapping) or {}
    T = nominal.get("horizon")
    if not isinstance(T, int) or T < 1:
        col.problems.append("nominal.horizon must be a positive integer")
        T = 1
    xs = nominal.get("states") or {}
    us = nominal.get("inputs") or {}
    x_nom = np.zeros((T + 1, len(states)))
    u_nom = np.zeros((T, len(inputs)))
    for i, s in enumerate(states):
        seq = _series(xs.get(s, 0.0), T + 1, f"nominal.states.{s}", col)
        if seq is not None:
            x_nom[:, i] = seq
    for i, u in enumerate(inputs):
        seq = _series(us.get(u, 0.0), T, f"nominal.inputs.{u}", col)
        if seq is not None:
            u_nom[:, i] = seq
    for s in xs:
        if s not in states:
            col.problems.append(f"nominal.states names unknown state {s!r}")
    for u in us:
        if u not in inputs:
            col.problems.append(f"nominal.inputs names unknown input {u!r}")

    tube_doc = col.need(doc, "tube", "section 'tube'", Mapping) or {}
    tube: list[list[Polynomial]] = [[] for _ in range(T)]
    box_info = None
    if "box" in tube_doc:
        box = tube_doc["box"] or {}
        radius = box.get("radius") or {}
        center = box.get("center") or {}
        rad = np.full((T, len(states)), np.nan)
        cen = x_nom[1:].copy()
        for s, r in radius.items():
            if s not in states:
                col.problems.append(f"tube.box.radius names unknown state {s!r}")
                continue
            seq = _series(r, T, f"tube.box.radius.{s}", col)
            if seq is not None:
                rad[:, states.index(s)] = seq
        for s, c in center.items():
            if s not in states:
                col.problems.append(f"tube.box.center names unknown state {s!r}")
                continue
            seq = _series(c, T, f"tube.box.center.{s}", col)
            if seq is not None:
                cen[:, states.index(s)] = seq
        for k in range(T):
            for i, s in enumerate(states):
                if np.isnan(rad[k, i]):
                    continue
                x = Polynomial.var(s)
                tube[k].append(x - (cen[k, i] - rad[k, i]))
                tube[k].append((cen[k, i] + rad[k, i]) - x)
        box_info = {"radius": rad, "center": cen}
    if "polynomials" in tube_doc:
        steps = tube_doc["polynomials"]
        if not isinstance(steps, list) or len(steps) != T:
            col.problems.append(f"tube.polynomials must list {T} steps")
        else:
            for k, polys in enumerate(steps):
                polys = polys if isinstance(polys, list) else [polys]
                for j, text in enumerate(polys):
                    p = col.poly(text, f"tube.polynomials[{k}][{j}]")
                    if p is not None:
                        tube[k].append(p)
    if tube_doc and "box" not in tube_doc and "polynomials" not in tube_doc:
        col.problems.append("tube needs 'box' or 'polynomials'")

    fb = col.need(doc, "feedback", "section 'feedback'", Mapping) or {}
    terms_all, bounds_all = [], []
    for u in inputs:
        spec = fb.get(u)
        if spec is None:
            terms_all.append(())
            bounds_all.append((None, None))
            continue
        b = _bounds(spec.get("bounds"), f"feedback.{u}.bounds", col, allow_none=True)
        bounds_all.append(b or (None, None))
        ts = []
        for j, t in enumerate(spec.get("terms") or []):
            gname = t.get("gain")
            mono_text = t.get("monomial")
            gb = _bounds(t.get("bounds"), f"feedback.{u}.terms[{j}].bounds", col, allow_none=False)
            if not gname or mono_text is None or gb is None:
                col.problems.append(f"feedback.{u}.terms[{j}] needs gain, monomial and bounds")
                continue
            p = col.poly(mono_text, f"feedback.{u}.terms[{j}].monomial")
            if p is None:
                continue
            if len(p.terms) != 1 or next(iter(p.terms.values())) != 1.0:
                col.problems.append(f"feedback.{u}.terms[{j}].monomial must be a single monic monomial")
                continue
            ts.append(FeedbackTerm(str(gname), next(iter(p.terms)), gb[0], gb[1]))
        terms_all.append(tuple(ts))
    for u in fb:
        if u not in inputs:
            col.problems.append(f"feedback names unknown input {u!r}")

    solve = doc.get("solve") or {}
    opts = dict(order=int(solve.get("order", 2)), max_order=solve.get("max_order"),
                taylor_degree=int(solve.get("taylor_degree", 3)),
                propagation=str(solve.get("propagation", "auto")),
                rank_tol=float(solve.get("rank_tol", 1e-4)),
                moment_budget=int(solve.get("moment_budget", 24)),
                term_budget=int(solve.get("term_budget", 200_000)))
    if opts["max_order"] is not None:
        opts["max_order"] = int(opts["max_order"])

    if col.problems:
        raise ScenarioError(col.problems)
    try:
        model = SystemModel(tuple(states), tuple(inputs), tuple(noises), tuple(updates), dt)
        law = FeedbackLaw(tuple(inputs), tuple(terms_all), tuple(bounds_all))
    except ValueError as exc:
        raise ScenarioError([str(exc)]) from None
    unc_model = UncertaintyModel(initial, noise, overrides)
    scn = Scenario(name, model, unc_model, T, x_nom, u_nom, tube, law, box=box_info, **opts)
    for msg in scn.tube_violations():
        warnings.warn(msg, stacklevel=2)
    return scn


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    text = path.read_text()
    return loads_scenario(text, name=path.stem)


def loads_scenario(text: str, name: str = "scenario") -> Scenario:
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise ScenarioError([f"malformed scenario file: {getattr(exc, 'problem', exc)}{where}"]) from None
    return scenario_from_dict(doc, name)


def bundled(name: str) -> Path:
    """Path of a scenario or fixture shipped in the package data directory."""
    path = Path(str(resources.files("chancetube") / "data" / name))
    if not path.suffix and path.with_suffix(".yaml").exists():
        path = path.with_suffix(".yaml")
    return path
