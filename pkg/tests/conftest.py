from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helmgrid.netmodel import builtin_case, two_bus  # noqa: E402


@pytest.fixture(scope="session")
def case14():
    return builtin_case("case14")


@pytest.fixture(scope="session")
def case118():
    return builtin_case("case118")


@pytest.fixture(scope="session")
def case14_allpq():
    return builtin_case("case14_allpq")


@pytest.fixture()
def twobus():
    return two_bus()
