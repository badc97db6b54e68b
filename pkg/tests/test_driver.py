import json
import warnings

import numpy as np
import pytest

from chancetube.driver import GainSchedule, HandshakePending, load_gains, propagate, synthesize, verify
from chancetube.mcverify import rollout
from chancetube.scenario import bundled, loads_scenario
from chancetube.sdp import import_sdpa, solve, write_result


def short_ex1(horizon=3, initial="normal(0, 0.2)", noise="tri(0)", order=2):
    text = bundled("ex1").read_text()
    radii = "[0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1]"
    text = text.replace(radii, str([0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1][:horizon]))
    text = text.replace("horizon: 8", f"horizon: {horizon}")
    text = text.replace('x: "normal(0, 0.2)"', f'x: "{initial}"').replace('w: "tri(0)"', f'w: "{noise}"')
    text = text.replace("order: 3\n  max_order: 4", f"order: {order}\n  max_order: {order}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return loads_scenario(text, "ex1-short")


def test_trivial_scenario(trivial):
    sched = synthesize(trivial)
    assert sched.complete
    assert sched.gains == [{}, {}, {}]
    assert all(b == pytest.approx(1.0, abs=1e-6) for b in sched.bounds)


def test_short_ex1_schedule_shape():
    scn = short_ex1()
    sched = synthesize(scn)
    assert sched.complete and sched.failure is None
    assert len(sched.steps) == 3
    for rec in sched.steps:
        assert set(rec.result.gains) == {"g1", "g2"}
        assert 0.0 <= rec.result.bound <= 1.0 + 1e-6
        lo, hi = -5, 5
        assert all(lo <= v <= hi for v in rec.result.gains.values())
    rep = sched.report()
    assert rep["format_version"] == 1
    assert [s["k"] for s in rep["steps"]] == [0, 1, 2]
    assert "seconds" not in rep["steps"][0]
    assert "seconds" in sched.report(timing=True)["steps"][0]


def test_nominal_consistency():
    # noise fixed at 0.5 cancels the -0.1 drift, so x* = 0 is an exact trajectory
    scn = short_ex1(initial="dirac(0)", noise="dirac(0.5)")
    sched = synthesize(scn)
    assert sched.complete
    batch = rollout(scn, sched.gains, 4, seed=0)
    assert np.max(np.abs(batch.states)) < 1e-12
    for k in range(scn.horizon + 1):
        sm = propagate(scn, sched.gains, k, 2)
        assert abs(sm.seq[(1,)] - scn.nominal_state(k)["x"]) < 1e-9


def test_rerun_is_identical():
    scn = short_ex1(horizon=2)
    a = json.dumps(synthesize(scn).report())
    b = json.dumps(synthesize(scn).report())
    assert a == b


def test_verify_attaches_bound_table():
    scn = short_ex1()
    sched = synthesize(scn)
    batch = verify(scn, sched, 20_000, seed=1)
    rows = batch.summary()["bound_vs_rate"]
    assert [r["k"] for r in rows] == [1, 2, 3]
    for r in rows:
        assert r["consistent"], r
    plain = verify(scn, sched.gains, 20_000, seed=1)
    assert "bound_vs_rate" not in plain.summary()
    assert plain.joint_rate == batch.joint_rate


def test_external_handshake_round_trip(tmp_path):
    scn = short_ex1(horizon=2)
    embedded = synthesize(scn)
    rounds = 0
    while True:
        try:
            sched = synthesize(scn, external_dir=tmp_path)
            break
        except HandshakePending as exc:
            rounds += 1
            assert exc.problem_path.exists() and not exc.result_path.exists()
            # stand in for an external solver: read the exported file and solve it
            problem = import_sdpa(exc.problem_path.read_text())
            sol = solve(problem)
            write_result(exc.result_path, problem, sol.values)
            assert rounds <= 4
    assert rounds == 2
    assert sched.complete and sched.settings["solver"] == "external"
    for a, b in zip(sched.steps, embedded.steps):
        for g in a.result.gains:
            assert a.result.gains[g] == pytest.approx(b.result.gains[g], abs=1e-5)
        assert a.result.bound == pytest.approx(b.result.bound, abs=1e-5)


def test_write_and_load_gains(tmp_path):
    scn = short_ex1(horizon=2)
    sched = synthesize(scn)
    sched.write(tmp_path / "r.json", tmp_path / "g.json")
    assert load_gains(tmp_path / "g.json") == sched.gains
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["complete"] is True and len(doc["steps"]) == 2
    step = doc["steps"][0]
    for key in ("gains", "bound", "rank", "lambda_min", "propagation", "truncated"):
        assert key in step


def test_load_gains_accepts_reference_file(reference_gains):
    assert len(reference_gains) == 8 and reference_gains[0] == {"g1": -1.1, "g2": -2.99}


def test_load_gains_rejects_garbage(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"gains": [1, 2]}))
    with pytest.raises(ValueError):
        load_gains(p)


def test_propagate_range_checks(ex1, reference_gains):
    with pytest.raises(IndexError):
        propagate(ex1, reference_gains, 9, 2)
    with pytest.raises(ValueError):
        propagate(ex1, reference_gains[:1], 3, 2)


def test_partial_schedule_keeps_gains():
    sched = GainSchedule("x")
    assert sched.gains == [] and sched.report()["complete"] is False


def test_order_too_low_halts_with_diagnostic():
    from conftest import TRIVIAL

    text = TRIVIAL.replace('"x + u + 0"', '"x + u + x^3"').replace("solve: {order: 1}", "solve: {order: 1, max_order: 1}")
    sched = synthesize(loads_scenario(text, "cubic"))
    assert not sched.complete
    assert sched.failure.startswith("step 0: constraints need a higher relaxation order")
    assert sched.report()["failure"] == sched.failure
