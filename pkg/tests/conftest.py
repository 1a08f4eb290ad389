import numpy as np
import pytest

from nbodyscatter.models import IntegratorConfig, PhaseState
from nbodyscatter.services.nbody_core import homogeneous_system, newtonian_system
from nbodyscatter.services.oracles import herbst_system, kepler_hyperbolic_state


@pytest.fixture
def tight():
    return IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14)


@pytest.fixture
def newtonian_pair():
    return newtonian_system((1.0, 1.0), d=2)


@pytest.fixture
def kepler_hyperbola():
    """Attractive pair, relative speed 3 at infinity, impact parameter 2, five time units past periapsis."""
    spec = newtonian_system((1.0, 1.0), d=2)
    state, hyperbola = kepler_hyperbolic_state(coupling=-1.0, energy=2.25, impact_parameter=2.0,
                                               time_from_periapsis=5.0)
    return spec, state, hyperbola


@pytest.fixture
def herbst_pair():
    return herbst_system(0.75, 1.0)


@pytest.fixture
def short_range_pair():
    spec = homogeneous_system((1.0, 1.0), 2, 2.0, 1.0)
    state = PhaseState(p=[-0.5, 0.0, 0.5, 0.0], q=[-100.0, 0.0, 100.0, 0.0])
    return spec, state


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
