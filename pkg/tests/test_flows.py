import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from nbodyscatter.errors import DegenerateVelocityError, DomainError
from nbodyscatter.models import IntegratorConfig, PhaseState, TerminationKind
from nbodyscatter.services.flows import (
    composition_weights,
    dollard_flow,
    dollard_W,
    f_alpha,
    f_alpha_quadrature,
    f_alpha_series,
    free_flow,
    free_flow_path,
    nbody_flow,
)
from nbodyscatter.services.free_region import reverse_momenta
from nbodyscatter.services.nbody_core import homogeneous_system, zero_potential_system
from nbodyscatter.services.oracles import kepler_elliptic_state, kepler_state_at


def test_zero_potential_flow_is_free_flow():
    spec = zero_potential_system(3, 2)
    x0 = PhaseState(p=[1.0, 0.0, 0.0, 2.0, -1.0, -1.0], q=[0.0, 0.0, 5.0, 0.0, 0.0, 5.0])
    traj = nbody_flow(spec, x0, (0.0, 10.0), IntegratorConfig(), t_eval=np.linspace(0.0, 10.0, 11))
    assert_allclose(traj.q, free_flow_path(spec, x0, traj.times), atol=1e-10)
    assert_allclose(traj.final_state.q, free_flow(spec, x0, 10.0).q, atol=1e-10)
    assert traj.energy_drift < 1e-12


def test_kepler_hyperbola_is_reproduced(kepler_hyperbola, tight):
    spec, x0, hyperbola = kepler_hyperbola
    traj = nbody_flow(spec, x0, (0.0, 20.0), tight)
    expected = kepler_state_at(hyperbola, 25.0)
    assert traj.termination.completed
    assert_allclose(traj.final_state.q, expected.q, atol=1e-8)
    assert_allclose(traj.final_state.p, expected.p, atol=1e-8)
    assert traj.energy_drift < 1e-10


def test_ellipse_returns_after_one_period(tight):
    spec = homogeneous_system((1.0, 1.0), 2, 1.0, -1.0)
    x0 = kepler_elliptic_state(energy=-0.5, angular_momentum=0.3)
    period = 2.0 * math.pi * math.sqrt(0.5)
    traj = nbody_flow(spec, x0, (0.0, period), tight)
    assert traj.final_state.distance(x0) < 1e-7


def test_time_reversal_returns_to_start(kepler_hyperbola, tight):
    spec, x0, _ = kepler_hyperbola
    forward = nbody_flow(spec, x0, (0.0, 30.0), tight).final_state
    back = nbody_flow(spec, reverse_momenta(forward), (0.0, 30.0), tight).final_state
    assert reverse_momenta(back).distance(x0) < 1e-8


def test_backward_trajectory_times_decrease(kepler_hyperbola, tight):
    spec, x0, _ = kepler_hyperbola
    traj = nbody_flow(spec, x0, (0.0, -4.0), tight, t_eval=[-1.0, -2.0, -3.0, -4.0])
    assert_allclose(traj.times, [0.0, -1.0, -2.0, -3.0, -4.0])
    assert traj.direction == -1


def test_collision_radius_stops_head_on_fall():
    spec = homogeneous_system((1.0, 1.0), 1, 1.0, -1.0)
    x0 = PhaseState(p=[0.0, 0.0], q=[-1.0, 1.0])
    traj = nbody_flow(spec, x0, (0.0, 10.0), IntegratorConfig(collision_radius=1e-3))
    assert traj.termination.kind is TerminationKind.COLLISION
    assert traj.termination.time < 10.0


def test_yoshida6_agrees_with_dop853(tight):
    spec = homogeneous_system((1.0, 1.0), 2, 2.0, 1.0)
    x0 = PhaseState(p=[-0.5, 0.0, 0.5, 0.0], q=[-3.0, -0.5, 3.0, 0.5])
    reference = nbody_flow(spec, x0, (0.0, 20.0), tight).final_state
    symplectic = nbody_flow(spec, x0, (0.0, 20.0), IntegratorConfig(method="yoshida6", step=0.05))
    assert symplectic.final_state.distance(reference) < 1e-7
    assert symplectic.energy_drift < 1e-7


def test_composition_weights():
    weights = composition_weights(6)
    assert weights.shape == (9,)
    assert weights.sum() == pytest.approx(1.0)
    assert_allclose(weights, weights[::-1])
    with pytest.raises(DomainError):
        composition_weights(3)


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=-1e4, max_value=1e4, allow_nan=False))
def test_f_alpha_one_is_asinh(t):
    assert f_alpha(1.0, t) == pytest.approx(math.asinh(t), rel=1e-12, abs=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.floats(min_value=0.05, max_value=1.0), st.floats(min_value=-200.0, max_value=200.0))
def test_f_alpha_is_odd_and_matches_quadrature(alpha, t):
    assert f_alpha(alpha, -t) == pytest.approx(-f_alpha(alpha, t))
    assert f_alpha(alpha, t) == pytest.approx(f_alpha_quadrature(alpha, t), rel=1e-9, abs=1e-12)


def test_f_alpha_series_matches_quadrature():
    for t in (0.5, 2.0, 10.0, 100.0):
        assert f_alpha_series(0.75, t) == pytest.approx(f_alpha_quadrature(0.75, t), rel=1e-9)


def test_f_alpha_domain():
    with pytest.raises(DomainError):
        f_alpha(1.5, 1.0)
    with pytest.raises(DomainError):
        f_alpha(0.0, 1.0)


def test_dollard_W_closed_form_matches_quadrature():
    spec = homogeneous_system((1.0, 1.0), 3, 0.8, -1.0)
    p = np.array([1.0, 0.2, 0.0, -1.0, -0.2, 0.1])
    closed = dollard_W(spec, p, 100.0, method="closed_form")
    quadrature = dollard_W(spec, p, 100.0, method="quadrature")
    assert_allclose(closed, quadrature, rtol=1e-8)
    assert_allclose(dollard_W(spec, p, -100.0), -closed, rtol=1e-12)


def test_dollard_W_edge_cases(newtonian_pair):
    assert_allclose(dollard_W(zero_potential_system(2, 2), [1.0, 0.0, -1.0, 0.0], 5.0), np.zeros(4))
    with pytest.raises(DegenerateVelocityError):
        dollard_W(newtonian_pair, [1.0, 0.0, 1.0, 0.0], 5.0)
    with pytest.raises(DomainError):
        dollard_W(homogeneous_system((1.0, 1.0), 2, 2.0, 1.0), [1.0, 0.0, -1.0, 0.0], 5.0, method="closed_form")


def test_dollard_flow_composes(newtonian_pair):
    x = PhaseState(p=[0.7, 0.1, -0.7, -0.1], q=[1.0, 2.0, -1.0, 0.0])
    direct = dollard_flow(newtonian_pair, x, 3.0, 50.0)
    stepped = dollard_flow(newtonian_pair, dollard_flow(newtonian_pair, x, 3.0, 10.0), 10.0, 50.0)
    assert stepped.distance(direct) < 1e-12
    assert_allclose(direct.p, x.p)
    assert dollard_flow(newtonian_pair, x, 4.0, 4.0) is x


@settings(max_examples=10, deadline=None)
@given(st.lists(st.floats(min_value=-1.0, max_value=1.0, allow_nan=False), min_size=6, max_size=6),
       st.sampled_from(["DOP853", "yoshida6"]))
def test_total_momentum_is_conserved(momenta, method):
    spec = homogeneous_system((1.0, 2.0, 0.5), 2, 1.0, 1.0)
    x0 = PhaseState(p=momenta, q=[-3.0, 0.0, 0.0, 2.0, 4.0, -1.0])
    cfg = IntegratorConfig(method=method, rel_tol=1e-10, abs_tol=1e-12, step=0.05)
    traj = nbody_flow(spec, x0, (0.0, 20.0), cfg, t_eval=np.linspace(0.0, 20.0, 21))
    total = traj.p.reshape(traj.p.shape[0], 3, 2).sum(axis=1)
    assert_allclose(total, np.broadcast_to(total[0], total.shape), atol=1e-10)
    assert_allclose(total[0], np.asarray(momenta).reshape(3, 2).sum(axis=0), atol=1e-12)
