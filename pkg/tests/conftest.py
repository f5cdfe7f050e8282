from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mdl import AdmissibilityProfile, LimitSpace, generate_standard
from mdl.inverse_system import interval_system

settings.register_profile("mdl", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("mdl")


@pytest.fixture(scope="session")
def laakso6():
    return generate_standard(AdmissibilityProfile(2), 6, "doubling")


@pytest.fixture(scope="session")
def laakso4():
    return generate_standard(AdmissibilityProfile(2), 4, "doubling")


@pytest.fixture(scope="session")
def space6(laakso6):
    return LimitSpace(laakso6)


@pytest.fixture(scope="session")
def space4(laakso4):
    return LimitSpace(laakso4)


@pytest.fixture(scope="session")
def line_system():
    return interval_system(2, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
