import numpy as np
import pytest

from adaptrom.mesh import build_case_mesh


@pytest.fixture(scope="session")
def square_p2():
    return build_case_mesh("square", (8, 8), 2)


@pytest.fixture(scope="session")
def channel_p2():
    return build_case_mesh("channel", (20, 3), 2)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
