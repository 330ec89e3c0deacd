import os

import numpy as np
import pytest

from linlmp import (
    Branch,
    Bus,
    BusKind,
    Generator,
    ModelOptions,
    Network,
    load_case,
    merge_ratings,
    parse_case,
    parse_ratings,
    solve_lmp,
)

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")

# Lossy two-bus system: reference generator feeding a 1.0 + j0.2 load over
# one line; the worked numbers (2% loss premium, loss trace) come from this.
CASE2_TEXT = """function mpc = case2
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
1 3 0 0 0 0 1 1 0 138 1 1.10 0.90;
2 1 100 20 0 0 1 1 0 138 1 1.10 0.90;
];
mpc.gen = [
1 101 20 100 -100 1.0 100 1 300 0;
];
mpc.branch = [
1 2 0.01 0.1 0.04 300 0 0 0 0 1 -360 360;
];
mpc.gencost = [
2 0 0 3 0.01 20 0;
];
"""

# Triangle with a cheap reference generator, an expensive generator and one
# load; the 1-3 limit forces congestion.
CASE3_TEXT = """function mpc = case3
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
1 3 0 0 0 0 1 1 0 138 1 1.15 0.85;
2 2 0 0 0 0 1 1 0 138 1 1.15 0.85;
3 1 200 40 0 0 1 1 0 138 1 1.15 0.85;
];
mpc.gen = [
1 100 0 100 -100 1.0 100 1 300 0;
2 50 0 100 -100 1.0 100 1 300 0;
];
mpc.branch = [
1 2 0.01 0.1 0.02 0 0 0 0 0 1 -360 360;
1 3 0.01 0.1 0.02 80 0 0 0 0 1 -360 360;
2 3 0.01 0.1 0.02 0 0 0 0 0 1 -360 360;
];
mpc.gencost = [
2 0 0 3 0.005 10 0;
2 0 0 3 0.005 30 0;
];
"""


def spec_two_bus() -> Network:
    """The pure-reactance shunted pair behind the hand-computed X/GSDF
    values (x = 0.1, b_shunt = -0.1 at each bus, reference at bus 1)."""
    return Network(
        buses=(
            Bus(1, BusKind.REFERENCE, 0.0, 0.0, 0.0, -0.1, 0.9, 1.1),
            Bus(2, BusKind.LOAD, 1.0, 0.2, 0.0, -0.1, 0.9, 1.1),
        ),
        branches=(Branch(1, 2, 0.0, 0.1, 0.0),),
        generators=(Generator(1, 0.0, 3.0, -1.0, 1.0, 2000.0, 100.0, 100.0),),
        base_mva=100.0,
    )


@pytest.fixture(scope="session")
def case2():
    return parse_case(CASE2_TEXT)


@pytest.fixture(scope="session")
def case3():
    return parse_case(CASE3_TEXT)


@pytest.fixture(scope="session")
def case118():
    return load_case(os.path.join(FIXTURES, "case118.m"))


@pytest.fixture(scope="session")
def case118_rated(case118):
    with open(os.path.join(FIXTURES, "case118_ratings.dat")) as fh:
        return merge_ratings(case118, parse_ratings(fh.read()))


@pytest.fixture(scope="session")
def run2(case2):
    return solve_lmp(case2, ModelOptions(loss_tolerance=1e-8))


@pytest.fixture(scope="session")
def run118_normal(case118_rated):
    opts = ModelOptions(
        v_min_override=0.95,
        v_max_override=1.05,
        loss_tolerance=1e-4,
        max_iterations=10,
    )
    return solve_lmp(case118_rated, opts)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240118)
