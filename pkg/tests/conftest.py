import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mhdfem.mesh import build_structured_mesh
from mhdfem.timestepper import Operators

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=25,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def mesh1():
    return build_structured_mesh(1)


@pytest.fixture(scope="session")
def mesh2():
    return build_structured_mesh(2)


@pytest.fixture(scope="session")
def mesh3():
    return build_structured_mesh(3)


@pytest.fixture(scope="session")
def ops2():
    return Operators(build_structured_mesh(2))


@pytest.fixture(scope="session")
def ops3():
    return Operators(build_structured_mesh(3))


@pytest.fixture(scope="session")
def ops4():
    return Operators(build_structured_mesh(4))


def m_norm(M, x):
    return float(np.sqrt(max(x @ (M @ x), 0.0)))
