import json
from pathlib import Path

import pytest

from magstep.invariants import compute_invariants

FIXTURES = Path(__file__).parent / "oracles" / "fixtures.json"


@pytest.fixture(scope="session")
def oracle():
    return json.loads(FIXTURES.read_text())


@pytest.fixture(scope="session")
def inv05():
    return compute_invariants(-0.5)


@pytest.fixture(scope="session")
def inv05_raw():
    return compute_invariants(-0.5, extrapolate=False)


@pytest.fixture(scope="session")
def inv_m1():
    return compute_invariants(-1.0)
