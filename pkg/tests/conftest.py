"""
Shared fixtures: the 2-state toy chain, M/M/1 kernels and the queue-increment walk
"""
import numpy as np
import pytest

from src.core.chain import ChainSpec, FiniteChain, make_queue_increments
from src.core.lyapunov import Observable
from src.core.spectral import truncate_kernel

MM1_HALF_ALPHA = 1.0 / 3.0
MM1_NINE_TENTHS_ALPHA = 9.0 / 19.0


@pytest.fixture
def toy_chain():
    return FiniteChain(np.array([[0.5, 0.5], [0.5, 0.5]]))


@pytest.fixture
def toy_kernel(toy_chain):
    return truncate_kernel(toy_chain, 1)


@pytest.fixture
def toy_F():
    return Observable.tabulated([0.0, 1.0])


@pytest.fixture
def mm1_half():
    """M/M/1 with rho = 0.5"""
    return ChainSpec.mm1(MM1_HALF_ALPHA)


@pytest.fixture
def mm1_half_kernel(mm1_half):
    return truncate_kernel(mm1_half, 60)


@pytest.fixture
def mm1_centered_F():
    """F(x) = x - 1, centered for rho = 0.5"""
    return Observable.identity().center(1.0)


@pytest.fixture
def queue_law():
    """On/off increments with mu = 4, alpha = 3, kappa = 2"""
    return make_queue_increments(4.0, 3.0, 2.0)


@pytest.fixture
def queue_walk(queue_law):
    return ChainSpec.reflected_rw(queue_law)
