import numpy as np
import pytest

from chancetube.scenario import ScenarioError, bundled, load_scenario, loads_scenario
from conftest import TRIVIAL


def test_bundled_examples_load(ex1, ex2):
    assert ex1.horizon == 8 and ex1.model.state_vars == ("x",)
    assert ex1.law.gains == ("g1", "g2")
    assert ex2.horizon == 7 and ex2.model.state_vars == ("x", "y", "theta")
    assert len(ex2.law.gains) == 5
    assert ex2.x_nom.shape == (8, 3) and ex2.u_nom.shape == (7, 2)


def test_bundled_name_resolution():
    assert bundled("ex1") == bundled("ex1.yaml")
    assert load_scenario(bundled("ex1")).name == "ex1"


def test_box_tube_polynomials(ex1):
    # one linear face per side
    lo, hi = ex1.tube_at(1)
    assert lo.eval({"x": -0.8}) == pytest.approx(0.0, abs=1e-12)
    assert hi.eval({"x": 0.8}) == pytest.approx(0.0, abs=1e-12)
    assert lo.degree == hi.degree == 1
    assert ex1.tube_scale(3) == {"x": 0.6}
    assert ex1.tube_scale(0) == {}
    with pytest.raises(IndexError):
        ex1.tube_at(0)


def test_ex2_box_leaves_heading_free(ex2):
    polys = ex2.tube_at(3)
    assert len(polys) == 4
    assert all("theta" not in p.variables for p in polys)
    assert set(ex2.tube_scale(3)) == {"x", "y"}


def test_containment_vectorized(ex1):
    x = np.array([-0.81, -0.79, 0.0, 0.8, 0.81])
    assert ex1.contained(1, {"x": x}).tolist() == [False, True, True, True, False]


def test_nominal_point_includes_inputs(ex2):
    pt = ex2.nominal_point(2)
    assert pt["psi"] == 3.0 and pt["v"] == 1.5 and pt["theta"] == 0.3


def test_yaml_syntax_error_has_position():
    with pytest.raises(ScenarioError) as info:
        loads_scenario("system: [states\n  x: 1\n")
    assert "line" in str(info.value) and "column" in str(info.value)


def test_expression_error_has_position():
    with pytest.raises(Exception) as info:
        loads_scenario(TRIVIAL.replace('"x + u + 0"', '"x + * u"'))
    msg = str(info.value)
    assert "line" in msg and "column" in msg


def test_all_schema_problems_reported():
    text = (TRIVIAL.replace("horizon: 3", "horizon: 0")
            .replace('x: "dirac(0)"', 'x: "nosuch(1)"')
            .replace("solve: {order: 1}", "solve: {order: 1}\nextra: 1"))
    with pytest.raises(ScenarioError) as info:
        loads_scenario(text)
    probs = info.value.problems
    assert len(probs) >= 3
    assert any("horizon" in p for p in probs)
    assert any("extra" in p for p in probs)


def test_missing_sections():
    with pytest.raises(ScenarioError) as info:
        loads_scenario("format_version: 1\nname: nothing\n")
    assert len(info.value.problems) >= 3


def test_wrong_version():
    with pytest.raises(ScenarioError, match="format_version"):
        loads_scenario(TRIVIAL.replace("format_version: 1", "format_version: 7"))


def test_nominal_on_tube_boundary_warns():
    text = TRIVIAL.replace("radius: {x: 100}", "radius: {x: 0}")
    with pytest.warns(UserWarning, match="strictly inside"):
        loads_scenario(text)


def test_gain_name_collision():
    text = TRIVIAL.replace("terms: []", 'terms: [{gain: x, monomial: "x", bounds: [-1, 1]}]')
    with pytest.raises(ScenarioError, match="collides"):
        loads_scenario(text)
