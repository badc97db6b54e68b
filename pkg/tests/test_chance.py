import warnings

import numpy as np
import pytest

from chancetube.chance import (
    StepProblem,
    VariableLeakError,
    build_sdp,
    compose_constraints,
    extract_gains,
    probability_bound,
)
from chancetube.dynamics import closed_loop_step
from chancetube.moments import InsufficientOrderError, MomentSequence
from chancetube.polynomial import Polynomial, exponent_basis, parse_polynomial as P
from chancetube.propagation import initial_moments
from chancetube.scenario import bundled, loads_scenario
from chancetube.sdp import SdpSolution, solve

EX1 = bundled("ex1").read_text()


def ex1_with_tube(tube_yaml: str):
    head, rest = EX1.split("tube:\n", 1)
    tail = rest[rest.index("feedback:"):]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # zero-width tubes put the nominal on the boundary
        return loads_scenario(head + tube_yaml + tail, "ex1-variant")


def step_problem(scn, k=0, order=2):
    m = scn.model
    upd = m.polynomialize(scn.nominal_point(k), scn.taylor_degree)
    loop = closed_loop_step(m, upd, scn.law, scn.nominal_state(k), scn.u_nom[k])
    sm = initial_moments(m.state_vars, scn.uncertainty.initial_specs(m.state_vars), 2 * order)
    return compose_constraints(scn, k, loop, sm.seq, order=order)


def test_compose_example1_disk_tube():
    polys = "\n".join(f"    - [\"{r * r!r} - x^2\"]" for r in (0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1))
    scn = ex1_with_tube("tube:\n  polynomials:\n" + polys + "\n")
    sp = step_problem(scn)
    f = P("x + 4*x^2 + 0.6*x^3 + g1*x + g2*x^2 + 0.2*w - 0.1")
    assert sp.tube_polys[0].almost_equal(0.64 - f * f, 1e-12)
    assert sp.tube_polys[0].degree == 6
    assert sp.min_order() == 3


def test_compose_identity_dynamics():
    doc = EX1.replace('"x + 4*x^2 + 0.6*x^3 + u + 0.2*w - 0.1"', '"x"')
    head, rest = doc.split("tube:\n", 1)
    tail = rest[rest.index("feedback:"):]
    scn = loads_scenario(head + "tube:\n  polynomials: [" + ", ".join(['["x"]'] * 8) + "]\n" + tail, "id")
    sp = step_problem(scn)
    assert sp.tube_polys == [Polynomial.var("x")]


def test_build_sdp_example1_sizes(ex1):
    sp = step_problem(ex1, order=2)
    prob = build_sdp(sp)
    names = prob.block_names
    assert set(sp.layout.joint) == {"x", "w", "g1", "g2"}
    assert prob.blocks[0].size == 15
    assert sum(1 for v in prob.var_ids if v[0] == "y") == 70
    assert sum(1 for v in prob.var_ids if v[0] == "yG") == 15
    linear = [b for b, n in zip(prob.blocks, names) if n.startswith("gainbox") and not n.endswith("width")]
    assert len(linear) == 4 and all(b.size == 3 for b in linear)
    prob.validate()


def test_trivial_problem_has_probability_one():
    sm = MomentSequence.dirac(("x",), [0.0], 4)
    sp = StepProblem(0, 2, (), ("x",), (), [Polynomial.constant(1.0)], [], [], {}, sm, {})
    sol = solve(build_sdp(sp))
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(1.0, abs=1e-6)


def test_leak_and_order_checks():
    sm = MomentSequence.dirac(("x",), [0.0], 4)
    with pytest.raises(VariableLeakError):
        StepProblem(0, 2, (), ("x",), ("w",), [P("x - z")], [], [], {}, sm, {"w": None})
    with pytest.raises(VariableLeakError):
        StepProblem(0, 2, ("g",), ("x",), ("w",), [], [P("g*w")], [(None, None)], {"g": (-1, 1)}, sm, {"w": None})
    with pytest.raises(InsufficientOrderError):
        StepProblem(0, 3, (), ("x",), (), [P("x")], [], [], {}, sm, {})


def _dirac_solution(sp, point):
    lay = sp.layout
    norm = [(point[g] - lay.shift[g]) / lay.scale[g] for g in lay.gains]
    values = {}
    for a in exponent_basis(len(lay.gains), 2 * sp.order):
        values[("yG", a)] = float(np.prod([v ** e for v, e in zip(norm, a)]))
    return SdpSolution("optimal", values, 1.0, [], 0, 0.0)


def test_extract_dirac_round_trip(ex1):
    sp = step_problem(ex1, order=2)
    res = extract_gains(_dirac_solution(sp, {"g1": -1.1, "g2": -2.99}), sp)
    assert res.gains["g1"] == pytest.approx(-1.1, abs=1e-12)
    assert res.gains["g2"] == pytest.approx(-2.99, abs=1e-12)
    assert res.rank == 1 and res.status == "rank1_clean"


def test_extract_two_atoms_gives_midpoint(ex1):
    sp = step_problem(ex1, order=2)
    a = _dirac_solution(sp, {"g1": -1.0, "g2": -3.0}).values
    b = _dirac_solution(sp, {"g1": 1.0, "g2": 2.0}).values
    mix = SdpSolution("optimal", {k: 0.5 * a[k] + 0.5 * b[k] for k in a}, 1.0, [], 0, 0.0)
    res = extract_gains(mix, sp)
    assert res.rank == 2 and res.status == "rank1_forced"
    assert res.gains["g1"] == pytest.approx(0.0, abs=1e-12)
    assert res.gains["g2"] == pytest.approx(-0.5, abs=1e-12)


def test_probability_bound_clamps():
    sol = SdpSolution("optimal", {}, 1.03, [], 0, 0.0)
    assert probability_bound(sol) == 1.0 and sol.objective == 1.03
    assert probability_bound(SdpSolution("optimal", {}, -1e-9, [], 0, 0.0)) == 0.0


def test_tube_scaling_leaves_layout_unchanged(ex1):
    sp = step_problem(ex1, order=2)
    scaled = StepProblem(sp.k, sp.order, sp.gain_vars, sp.state_vars, sp.noise_vars,
                         [7.0 * p for p in sp.tube_polys], sp.input_polys, sp.input_bounds, sp.gain_bounds,
                         sp.state_moments, sp.noise_specs, {}, sp.state_center, sp.state_scale_cap)
    for (_, p), (_, q) in zip(sp.layout.constraints, scaled.layout.constraints):
        assert p.almost_equal(q, 1e-12)


def test_hierarchy_monotone_and_gains_in_box(ex1):
    objs = []
    for d in (2, 3):
        sp = step_problem(ex1, order=d)
        prob = build_sdp(sp)
        sol = solve(prob)
        assert sol.status == "optimal"
        res = extract_gains(sol, sp, problem=prob)
        assert all(-5 <= v <= 5 for v in res.gains.values()) and not res.clamped
        objs.append(sol.objective)
    assert objs[1] <= objs[0] + 1e-6


def test_zero_width_tube_is_loose_at_low_order():
    # Feasible points certify that the relaxation value stays high for d <= 4 even though
    # the true probability is 0; the iterates shrink as d grows.
    scn = ex1_with_tube("tube:\n  box:\n    radius:\n      x: [0, 0, 0, 0, 0, 0, 0, 0]\n")
    objs = []
    for d in (2, 3, 4):
        sol = solve(build_sdp(step_problem(scn, order=d)))
        assert min(sol.block_min_eigs) > -1e-9
        assert 0.0 <= sol.objective <= 1.0 + 1e-6
        objs.append(sol.objective)
    assert objs[0] >= objs[1] >= objs[2]
    assert objs[2] > 0.5
