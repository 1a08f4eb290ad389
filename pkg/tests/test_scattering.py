import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from nbodyscatter.errors import DomainError, NonConvergenceError, NotFreeError, StencilFailureError, UnequalMomentaError
from nbodyscatter.models import Comparison, IntegratorConfig, PhaseState, TransformMethod
from nbodyscatter.services.flows import free_flow, nbody_flow
from nbodyscatter.services.nbody_core import (
    hamiltonian,
    homogeneous_system,
    kinetic_energy,
    newtonian_system,
    pair_stats,
    zero_potential_system,
)
from nbodyscatter.services.oracles import kepler_elliptic_state
from nbodyscatter.services.scattering import (
    angle_between,
    asymptotic_offset,
    asymptotic_velocity,
    canonical_form,
    dollard_tracking_error,
    energy_at_infinity_gap,
    inverse_moller_dollard,
    inverse_moller_free,
    moller_short_range_fixed_point,
    moller_time_limit,
    momentum_sensitivity,
    momentum_tail_bound,
    pair_synchronization,
    relative_momentum,
    scattering_map,
    symplectic_residual,
    two_body_incoming,
)


@pytest.fixture
def free_pair():
    spec = zero_potential_system(2, 2)
    state = PhaseState(p=[1.0, 0.0, -1.0, 0.5], q=[0.0, 1.0, 2.0, 0.0])
    return spec, state


def test_zero_potential_asymptotics_are_exact(free_pair):
    spec, x0 = free_pair
    datum = asymptotic_velocity(spec, x0, IntegratorConfig(), 2.0 ** 10)
    assert datum.converged
    assert datum.tail_bound == 0.0
    assert_allclose(datum.p_plus, x0.p)
    image = inverse_moller_free(spec, x0, 1, IntegratorConfig())
    assert image.image.distance(x0) == 0.0
    result = scattering_map(spec, x0, IntegratorConfig())
    assert_allclose(result.p_plus, x0.p)
    assert result.deflection_angle == 0.0


def test_newtonian_escape_has_asymptotic_momentum(kepler_hyperbola, tight):
    spec, x0, hyperbola = kepler_hyperbola
    datum = asymptotic_velocity(spec, x0, tight, 2.0 ** 14)
    assert datum.entry_time is not None
    assert datum.residual < 1e-8
    rel = relative_momentum(spec, datum.p_plus)
    assert np.linalg.norm(rel) == pytest.approx(hyperbola.reduced_mass * hyperbola.asymptotic_speed, rel=1e-7)
    assert energy_at_infinity_gap(spec, datum, x0) < 1e-7
    assert datum.rate_estimate == pytest.approx(1.0, abs=0.2)


def test_incoming_and_outgoing_momenta_span_the_deflection(kepler_hyperbola, tight):
    spec, x0, hyperbola = kepler_hyperbola
    outgoing = asymptotic_velocity(spec, x0, tight, 2.0 ** 14)
    incoming = asymptotic_velocity(spec, x0, tight, 2.0 ** 14, direction=-1)
    angle = angle_between(relative_momentum(spec, incoming.p_plus), relative_momentum(spec, outgoing.p_plus))
    assert angle == pytest.approx(hyperbola.deflection_angle, abs=1e-6)


def test_bound_orbit_is_not_free(tight):
    spec = newtonian_system((1.0, 1.0), d=2)
    x0 = kepler_elliptic_state(energy=-0.5, angular_momentum=0.5)
    datum = asymptotic_velocity(spec, x0, tight, 2.0 ** 8)
    assert not datum.converged
    assert datum.tail_bound == math.inf
    assert datum.entry_time is None
    with pytest.raises(NotFreeError):
        asymptotic_velocity(spec, x0, tight, 2.0 ** 8, require_free=True)


def test_tail_bound_shrinks_with_separation(newtonian_pair):
    near = pair_stats(newtonian_pair, PhaseState(p=[-1.0, 0.0, 1.0, 0.0], q=[-10.0, 0.0, 10.0, 0.0]))
    far = pair_stats(newtonian_pair, PhaseState(p=[-1.0, 0.0, 1.0, 0.0], q=[-100.0, 0.0, 100.0, 0.0]))
    assert momentum_tail_bound(newtonian_pair, 1.0, far) == pytest.approx(
        0.1 * momentum_tail_bound(newtonian_pair, 1.0, near))


def test_comparison_domains(kepler_hyperbola, short_range_pair):
    spec, x0, _ = kepler_hyperbola
    with pytest.raises(DomainError):
        inverse_moller_free(spec, x0, 1, IntegratorConfig())
    weak = homogeneous_system((1.0, 1.0), 2, 0.4, 1.0)
    with pytest.raises(DomainError):
        inverse_moller_dollard(weak, x0, 1, IntegratorConfig())
    with pytest.raises(DomainError):
        moller_short_range_fixed_point(spec, x0)
    with pytest.raises(DomainError):
        inverse_moller_dollard(spec, x0, 2, IntegratorConfig())


def test_fixed_point_rejects_states_outside_the_region(short_range_pair):
    spec, _ = short_range_pair
    approaching = PhaseState(p=[0.5, 0.0, -0.5, 0.0], q=[-100.0, 0.0, 100.0, 0.0])
    with pytest.raises(DomainError):
        moller_short_range_fixed_point(spec, approaching)


def test_fixed_point_moller_transform(short_range_pair):
    spec, X0 = short_range_pair
    result = moller_short_range_fixed_point(spec, X0, tol=1e-10)
    assert result.method is TransformMethod.FIXED_POINT
    assert result.converged
    assert result.tail_bound > 0.0
    # repulsion slows the pair down before the comparison state is reached
    assert np.linalg.norm(result.image.p) < np.linalg.norm(X0.p)
    assert hamiltonian(spec, result.image) == pytest.approx(kinetic_energy(spec, X0.p), rel=1e-8)


@pytest.mark.slow
def test_fixed_point_agrees_with_time_limit(short_range_pair):
    spec, X0 = short_range_pair
    fixed = moller_short_range_fixed_point(spec, X0, tol=1e-10)
    limit = moller_time_limit(spec, X0, 1, Comparison.FREE, IntegratorConfig(rel_tol=1e-13, abs_tol=1e-14),
                              tol=1e-8, horizon=2.0 ** 14, t_first=2.0 ** 8, raise_on_failure=False)
    assert limit.residual < 1e-8
    assert fixed.image.distance(limit.image) < 1e-8


def test_fixed_point_reports_contraction(short_range_pair):
    spec, X0 = short_range_pair
    fixed = moller_short_range_fixed_point(spec, X0, tol=1e-10)
    assert fixed.contraction_ratio is not None
    assert 0.0 <= fixed.contraction_ratio < 0.95


@pytest.mark.slow
def test_offset_of_short_range_images(short_range_pair, tight):
    spec, X0 = short_range_pair
    b = np.array([0.0, 0.3, 0.0, -0.3])
    x_ref = moller_short_range_fixed_point(spec, X0, tol=1e-10).image
    x_off = moller_short_range_fixed_point(spec, PhaseState(p=X0.p, q=X0.q + b), tol=1e-10).image
    result = asymptotic_offset(spec, x_off, x_ref, tight, horizon=2.0 ** 14)
    assert_allclose(result.b, b, atol=1e-5)


@pytest.mark.slow
def test_synchronization_removes_momentum_mismatch(short_range_pair, tight):
    spec, X0 = short_range_pair
    b = np.array([0.0, 0.3, 0.0, -0.3])
    dp = np.array([0.0, 1e-9, 0.0, -1e-9])
    x1 = moller_short_range_fixed_point(spec, X0, tol=1e-10).image
    x2 = moller_short_range_fixed_point(spec, PhaseState(p=X0.p + dp, q=X0.q + b), tol=1e-10).image
    report = pair_synchronization(spec, x1, x2, tight, horizon=2.0 ** 14)
    assert_allclose(report.a_plus, b, atol=1e-6)
    assert report.momentum_mismatch == pytest.approx(np.linalg.norm(dp), rel=0.05)


def test_time_limit_raises_when_not_converged(short_range_pair):
    spec, X0 = short_range_pair
    with pytest.raises(NonConvergenceError):
        moller_time_limit(spec, X0, 1, Comparison.FREE, IntegratorConfig(), tol=1e-30, horizon=8.0)


def test_inverse_free_transform_intertwines_flows(short_range_pair, tight):
    spec, _ = short_range_pair
    x0 = PhaseState(p=[-0.5, 0.0, 0.5, 0.0], q=[-10.0, -1.5, 10.0, 1.5])
    base = inverse_moller_free(spec, x0, 1, tight, tol=1e-6, horizon=2.0 ** 13, t_first=16.0,
                               raise_on_failure=False)
    moved = nbody_flow(spec, x0, (0.0, 5.0), tight).final_state
    image = inverse_moller_free(spec, moved, 1, tight, tol=1e-6, horizon=2.0 ** 13, t_first=16.0,
                               raise_on_failure=False)
    assert image.image.distance(free_flow(spec, base.image, 5.0)) < 1e-6


def test_two_body_incoming(newtonian_pair):
    spec = homogeneous_system((1.0, 3.0), 2, 1.0, -1.0)
    state = two_body_incoming(spec, 2.0, 1.5, lead_time=10.0)
    P = state.p.reshape(2, 2)
    Q = state.q.reshape(2, 2)
    assert_allclose(P.sum(axis=0), 0.0, atol=1e-15)
    assert_allclose(Q[0] * 1.0 + Q[1] * 3.0, 0.0, atol=1e-13)
    assert_allclose(Q[0] - Q[1], [-20.0, 1.5])
    assert_allclose(relative_momentum(spec, state.p), [0.75 * 2.0, 0.0])
    with pytest.raises(DomainError):
        two_body_incoming(newtonian_system((1.0, 1.0, 1.0), d=2), 1.0, 1.0)


def test_angle_between():
    assert angle_between(np.array([1.0, 0.0]), np.array([0.0, 2.0])) == pytest.approx(math.pi / 2)
    assert angle_between(np.array([1.0, 0.0]), np.array([-1.0, 1e-9])) == pytest.approx(math.pi, abs=1e-8)
    assert angle_between(np.array([1.0, 1e-12]), np.array([1.0, 0.0])) == pytest.approx(1e-12, rel=1e-6)


def test_canonical_form():
    sigma = canonical_form(3)
    assert_allclose(sigma, -sigma.T)
    assert_allclose(sigma @ sigma, -np.eye(6))


def test_symplectic_residual_of_linear_maps(free_pair):
    spec, x0 = free_pair
    assert symplectic_residual(spec, lambda x: free_flow(spec, x, 3.0), x0) < 1e-9

    def stretch(x):
        return PhaseState(p=x.p, q=2.0 * x.q)

    assert symplectic_residual(spec, stretch, x0) == pytest.approx(1.0, abs=1e-6)


def test_symplectic_residual_rejects_failed_stencils(free_pair):
    spec, x0 = free_pair

    def failing(x):
        raise UnequalMomentaError("stencil")

    with pytest.raises(StencilFailureError):
        symplectic_residual(spec, failing, x0)


def test_offset_of_free_orbits(free_pair):
    spec, x_ref = free_pair
    shifted = PhaseState(p=x_ref.p, q=x_ref.q + np.array([0.0, 1.0, 0.0, 0.0]))
    result = asymptotic_offset(spec, shifted, x_ref, IntegratorConfig())
    v = spec.velocities(x_ref.p)
    assert result.orthogonality < 1e-12
    assert_allclose(result.b + v * (1.0 / float(v @ v)) * float(v @ np.array([0.0, 1.0, 0.0, 0.0])),
                    [0.0, 1.0, 0.0, 0.0], atol=1e-12)
    with pytest.raises(UnequalMomentaError):
        asymptotic_offset(spec, PhaseState(p=x_ref.p + 0.1, q=x_ref.q), x_ref, IntegratorConfig())


def test_free_orbits_track_their_comparison_exactly(free_pair):
    spec, x0 = free_pair
    position_errors, momentum_errors = dollard_tracking_error(spec, x0, [1.0, 2.0, 4.0], IntegratorConfig(),
                                                             horizon=2.0 ** 10)
    assert position_errors.shape == (3,)
    assert_allclose(position_errors, 0.0, atol=1e-9)
    assert_allclose(momentum_errors, 0.0, atol=1e-12)


def test_free_momentum_sensitivity_vanishes(free_pair):
    spec, x0 = free_pair
    dp, dq = momentum_sensitivity(spec, x0, IntegratorConfig(), 2.0 ** 8)
    assert dp.shape == dq.shape == (4, 4)
    assert_allclose(dp, 0.0, atol=1e-9)
    assert_allclose(dq, 0.0, atol=1e-9)
