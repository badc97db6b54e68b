import json

import pytest

from chancetube.cli import main
from chancetube.scenario import bundled
from conftest import TRIVIAL

REF = str(bundled("ex1_reference_gains.json"))


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_moments_at_zero_are_closed_form(capsys):
    code, out, _ = run(capsys, "moments", "ex1", "--upto", "4")
    assert code == 0
    rows = dict(line.split("\t") for line in out.splitlines()[1:])
    assert float(rows["E[x]"]) == 0.0
    assert float(rows["E[x^2]"]) == pytest.approx(0.04, abs=1e-15)
    assert float(rows["E[x^4]"]) == pytest.approx(3 * 0.2 ** 4, abs=1e-15)


def test_moments_after_one_step(capsys):
    code, out, _ = run(capsys, "moments", "ex1", "--step", "1", "--gains", REF, "--upto", "2", "--json")
    assert code == 0
    doc = json.loads(out)
    mean = next(r["value"] for r in doc["moments"] if r["monomial"] == "x")
    assert round(mean, 5) == 0.00707
    assert doc["format_version"] == 1 and doc["strategy"] == "exact_recursion"


def test_moments_step_out_of_range(capsys):
    code, _, err = run(capsys, "moments", "ex1", "--step", "9", "--gains", REF)
    assert code == 2 and "outside" in err


def test_moments_needs_gains(capsys):
    code, _, err = run(capsys, "moments", "ex1", "--step", "2")
    assert code == 2 and "--gains" in err


def test_verify_prints_rate_and_writes_csv(capsys, tmp_path):
    csv = tmp_path / "t.csv"
    code, out, _ = run(capsys, "verify", "ex1", REF, "--rollouts", "1000", "--seed", "4", "--csv", str(csv))
    assert code == 0
    assert "joint containment" in out
    assert len(csv.read_text().splitlines()) - 1 == 1000 * 9


def test_verify_rejects_zero_rollouts(capsys):
    code, _, err = run(capsys, "verify", "ex1", REF, "--rollouts", "0")
    assert code == 2 and "at least 1" in err


def test_verify_same_seed_same_summary(capsys, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        assert run(capsys, "verify", "ex1", REF, "--rollouts", "2000", "--seed", "9", "--summary", str(p))[0] == 0
    assert a.read_text() == b.read_text()


def test_verify_short_gains_file(capsys, tmp_path):
    g = tmp_path / "g.json"
    g.write_text(json.dumps({"format_version": 1, "gains": [{"g1": 0, "g2": 0}]}))
    code, _, err = run(capsys, "verify", "ex1", str(g))
    assert code == 2 and "horizon" in err


def test_parse_error_cites_position(capsys, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text(TRIVIAL.replace('"x + u + 0"', '"3**x"'))
    code, _, err = run(capsys, "synthesize", str(bad), "--out", str(tmp_path / "r.json"))
    assert code == 2
    assert "line" in err and "column" in err


def test_schema_errors_are_enumerated(capsys, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text(TRIVIAL.replace("horizon: 3", "horizon: -1").replace('x: "dirac(0)"', 'x: "nosuch(1)"'))
    code, _, err = run(capsys, "synthesize", str(bad))
    assert code == 2
    problems = [line for line in err.splitlines() if line.startswith("  ")]
    assert len(problems) >= 2


def test_missing_scenario(capsys):
    code, _, err = run(capsys, "synthesize", "no/such/file.yaml")
    assert code == 2 and "no scenario" in err


def test_bad_flag_is_input_error(capsys):
    assert run(capsys, "synthesize", "ex1", "--solver", "magic")[0] == 2


def test_step_failure_exit_one(capsys, tmp_path):
    f = tmp_path / "cubic.yaml"
    f.write_text(TRIVIAL.replace('"x + u + 0"', '"x + u + x^3"').replace("solve: {order: 1}", "solve: {order: 1, max_order: 1}"))
    code, _, err = run(capsys, "synthesize", str(f), "--out", str(tmp_path / "r.json"))
    assert code == 1 and "step 0" in err
    assert json.loads((tmp_path / "r.json").read_text())["complete"] is False


def test_external_mode_halts_pending(capsys, tmp_path):
    ext = tmp_path / "sdpa"
    code, _, err = run(capsys, "synthesize", "ex1", "--order", "2", "--solver", "external",
                       "--external-dir", str(ext), "--out", str(tmp_path / "r.json"))
    assert code == 3
    files = sorted(p.name for p in ext.iterdir())
    assert files == ["ex1_k0_d2.dat-s"]
    assert "ex1_k0_d2.result" in err


def test_trivial_synthesize(capsys, tmp_path):
    f = tmp_path / "t.yaml"
    f.write_text(TRIVIAL)
    out_path = tmp_path / "r.json"
    code, out, _ = run(capsys, "synthesize", str(f), "--out", str(out_path))
    assert code == 0
    gains = json.loads((tmp_path / "r_gains.json").read_text())
    assert gains["gains"] == [{}, {}, {}]


def test_ex1_order_three_end_to_end(capsys, tmp_path):
    out_path = tmp_path / "ex1.json"
    code, out, _ = run(capsys, "synthesize", "ex1", "--order", "3", "--out", str(out_path))
    assert code == 0
    rep = json.loads(out_path.read_text())
    assert rep["complete"] and len(rep["steps"]) == 8
    assert rep["settings"]["order"] == 3
    assert all(s["order"] >= 3 for s in rep["steps"])
