"""Shared fixtures and the acceptance-criterion summary.

Tests marked ``@pytest.mark.criterion(n, title)`` are collected into a
summary section printed at the end of the run, one PASS/FAIL line per
criterion.  Expensive pipelines (the 1.19M-point grid of the four-atom
example, the Gamma(2,1) scenario) run once per session here.
"""

import time

import numpy as np
import pytest

from coshare import (
    Constraint,
    FiniteSpace,
    GridSpec,
    PathwiseBounds,
    RandomVariable,
    RiskCeiling,
    RiskMeasureSpec,
    comonotone_minimize,
    grid_minimize,
    var_scenario,
)

CRITERION_TITLES = {
    1: "three-state ES pair: 19/8 vs 29/12, gap 1/24",
    2: "four-atom VaR-ceiling grids: 2, 25/12, 9/4",
    3: "retention counterexample witness and NotSolid verdict",
    4: "exact comonotonic improvement (1/4, 3/4, 5/4)",
    5: "saturation curve breakpoints 12, 31/2, 20 as rationals",
    6: "Gamma(2,1) scenario: 2.0198 < 2.0517 < 2.0972 < 3.01",
    7: "property suites, 200+ instances each",
    8: "two-agent fixed-point residual and interval scan",
}

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(num, title): acceptance criterion test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    num = marker.args[0]
    if report.when == "call":
        _RESULTS[num] = report.passed
    elif report.failed:
        _RESULTS[num] = False


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(CRITERION_TITLES):
        if num in _RESULTS:
            status = "PASS" if _RESULTS[num] else "FAIL"
        else:
            status = "NOT RUN"
        terminalreporter.write_line(
            f"criterion {num}: {status} - {CRITERION_TITLES[num]}")


@pytest.fixture(scope="session")
def three_state_instance():
    """Two ES agents on S = (1,2,3), envelope pinning X_1 except at S=3."""
    from coshare import AggregateEnvelope
    from fractions import Fraction

    space = FiniteSpace((f"s{k}", Fraction(1, 3)) for k in (1, 2, 3))
    S = RandomVariable(space, (1.0, 2.0, 3.0))
    measures = (RiskMeasureSpec.es(0.2), RiskMeasureSpec.es(1.0 / 3.0))
    envelope = AggregateEnvelope(
        lower=((1.0, 0.25), (2.0, 0.25), (3.0, 0.25)),
        upper=((1.0, 0.25), (2.0, 0.25), (3.0, 1.75)))
    constraints = (Constraint(envelope, scope=0),
                   Constraint(PathwiseBounds(lower=0.0)))
    grid = GridSpec.from_family(
        base=((0.25, 0.25, 0.0),), direction=((0.0, 0.0, 1.0),),
        lo=0.25, hi=1.75, step=0.01)
    return space, S, measures, constraints, grid


@pytest.fixture(scope="session")
def four_atom_instance():
    """Two ES agents on the 0.9925/0.0025^3 space with a VaR ceiling."""
    space = FiniteSpace(zip(("A0", "A1a", "A1b", "A2"),
                            (0.9925, 0.0025, 0.0025, 0.0025)))
    S = RandomVariable(space, (0.0, 2.0, 2.0, 4.0))
    measures = (RiskMeasureSpec.es(0.99), RiskMeasureSpec.es(0.9925))
    constraints = (
        Constraint(PathwiseBounds(lower=0.0)),
        Constraint(RiskCeiling(RiskMeasureSpec.var(0.995), 1.0)),
    )
    return space, S, measures, constraints


@pytest.fixture(scope="session")
def four_atom_grids(four_atom_instance):
    """The three enumerations on the step-1/8 grid, with wall time."""
    space, S, measures, constraints = four_atom_instance
    grid = GridSpec.uniform(1, 4, 0.0, 4.0, 0.125)
    t0 = time.perf_counter()
    free = grid_minimize(space, S, measures, (), grid)
    constrained = grid_minimize(space, S, measures, constraints, grid)
    comonotone = comonotone_minimize(space, S, measures, constraints, grid)
    elapsed = time.perf_counter() - t0
    return {
        "free": free,
        "constrained": constrained,
        "comonotone": comonotone,
        "elapsed": elapsed,
    }


@pytest.fixture(scope="session")
def gamma_scenario():
    """var_scenario() with wall time; everything in it is deterministic."""
    t0 = time.perf_counter()
    report = var_scenario()
    elapsed = time.perf_counter() - t0
    return report, elapsed


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)
