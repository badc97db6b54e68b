import pytest

from chancetube.scenario import bundled, load_scenario, loads_scenario


@pytest.fixture(scope="session")
def ex1():
    return load_scenario(bundled("ex1"))


@pytest.fixture(scope="session")
def ex2():
    return load_scenario(bundled("ex2"))


@pytest.fixture(scope="session")
def reference_gains():
    from chancetube.driver import load_gains
    return load_gains(bundled("ex1_reference_gains.json"))


TRIVIAL = """
format_version: 1
name: trivial
system:
  states: [x]
  inputs: [u]
  noises: []
  update: {x: "x + u + 0"}
uncertainty:
  initial: {x: "dirac(0)"}
  noise: {}
nominal:
  horizon: 3
  states: {x: 0}
  inputs: {u: 0}
tube:
  box: {radius: {x: 100}}
feedback:
  u: {bounds: null, terms: []}
solve: {order: 1}
"""


@pytest.fixture
def trivial():
    return loads_scenario(TRIVIAL, "trivial")


# criterion number -> (passed, detail); filled by test_acceptance and echoed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
