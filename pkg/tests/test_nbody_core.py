import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from numpy.testing import assert_allclose

from nbodyscatter.errors import CollisionError, ConfigurationError, DomainError, InfiniteSeminormError
from nbodyscatter.models import GaussianBump, PhaseState, SoftenedPower
from nbodyscatter.services.nbody_core import (
    alpha_norm,
    check_collision,
    hamiltonian,
    homogeneous_system,
    kinetic_energy,
    newtonian_system,
    pair_distances,
    pair_stats,
    potential_energy,
    potential_gradient,
    potential_hessian_apply,
    relative_acceleration,
    seminorm,
    smooth_abs,
    smooth_abs_tail,
    smooth_system,
    zero_potential_system,
)

coordinates = st.lists(st.floats(min_value=-5.0, max_value=5.0, allow_nan=False), min_size=6, max_size=6)


def _central_gradient(func, q, h=1e-6):
    grad = np.zeros_like(q)
    for k in range(q.shape[0]):
        step = np.zeros_like(q)
        step[k] = h
        grad[k] = (func(q + step) - func(q - step)) / (2.0 * h)
    return grad


def test_newtonian_pair_energy():
    spec = newtonian_system((1.0, 2.0), d=2)
    state = PhaseState(p=[1.0, 0.0, 0.0, 2.0], q=[0.0, 0.0, 2.0, 0.0])
    assert potential_energy(spec, state.q) == pytest.approx(-1.0)
    assert kinetic_energy(spec, state.p) == pytest.approx(0.5 + 1.0)
    assert hamiltonian(spec, state) == pytest.approx(0.5)


@settings(max_examples=40, deadline=None)
@given(coordinates)
def test_gradient_matches_finite_differences(values):
    spec = homogeneous_system((1.0, 2.0, 3.0), 2, 0.7, -1.3)
    q = np.array(values)
    assume(pair_distances(spec, q).min() > 0.5)
    expected = _central_gradient(lambda x: potential_energy(spec, x), q)
    assert_allclose(potential_gradient(spec, q), expected, rtol=1e-5, atol=1e-7)


@settings(max_examples=30, deadline=None)
@given(coordinates, coordinates)
def test_hessian_apply_matches_gradient_differences(values, direction):
    spec = homogeneous_system((1.0, 1.0, 2.0), 2, 1.5, 0.8)
    q = np.array(values)
    w = np.array(direction)
    assume(pair_distances(spec, q).min() > 0.5)
    h = 1e-6
    expected = (potential_gradient(spec, q + h * w) - potential_gradient(spec, q - h * w)) / (2.0 * h)
    assert_allclose(potential_hessian_apply(spec, q, w), expected, rtol=1e-4, atol=1e-6)


def test_smooth_profile_gradient_matches_finite_differences():
    spec = smooth_system((1.0, 1.0, 1.0), 2, SoftenedPower(coupling=0.5, alpha=1.0, softening=0.3), 1.0)
    q = np.array([0.1, 0.2, -0.4, 0.3, 0.0, -0.6])
    expected = _central_gradient(lambda x: potential_energy(spec, x), q)
    assert_allclose(potential_gradient(spec, q), expected, rtol=1e-6, atol=1e-9)


def test_gaussian_bump_is_finite_at_coincidence():
    spec = smooth_system((1.0, 1.0), 1, GaussianBump(amplitude=2.0, width=0.5), 3.0)
    assert potential_energy(spec, [0.0, 0.0]) == pytest.approx(2.0)
    assert_allclose(potential_gradient(spec, [0.0, 0.0]), [0.0, 0.0])


def test_collision_raises_for_singular_potential(newtonian_pair):
    with pytest.raises(CollisionError):
        potential_energy(newtonian_pair, [1.0, 1.0, 1.0, 1.0])
    with pytest.raises(CollisionError):
        pair_stats(newtonian_pair, PhaseState(p=[0.0] * 4, q=[1.0, 1.0, 1.0, 1.0]))


def test_relative_acceleration_is_minus_difference_of_accelerations():
    spec = newtonian_system((1.0, 2.0, 0.5), d=3)
    q = np.array([0.0, 0.0, 0.0, 1.0, 0.5, 0.0, -0.3, 2.0, 1.0])
    accel = -spec.velocities(potential_gradient(spec, q)).reshape(3, 3)
    assert_allclose(relative_acceleration(spec, q, 0, 2), -(accel[0] - accel[2]), rtol=1e-13)
    with pytest.raises(DomainError):
        relative_acceleration(spec, q, 1, 1)


def test_pair_stats_extrema():
    spec = zero_potential_system(3, 1)
    stats = pair_stats(spec, PhaseState(p=[0.0, 1.0, 3.0], q=[0.0, 1.0, 4.0]))
    assert stats.q_min == pytest.approx(1.0)
    assert stats.q_max == pytest.approx(4.0)
    assert stats.v_min == pytest.approx(1.0)
    assert stats.v_max == pytest.approx(3.0)
    assert stats.dots[0, 2] == pytest.approx(12.0)


def test_homogeneous_seminorms_closed_form(newtonian_pair):
    assert seminorm(newtonian_pair, 1.0, 1).value == pytest.approx(1.0)
    # d = 2, alpha = 1: alpha (d (alpha + 1) + d (d - 1) / 2 (alpha + 2)) = 7
    assert seminorm(newtonian_pair, 1.0, 2).value == pytest.approx(7.0)
    assert alpha_norm(newtonian_pair, 1.0) == pytest.approx(1.0)


def test_seminorm_scales_with_inverse_smallest_mass():
    light = homogeneous_system((0.5, 4.0), 2, 1.0, -1.0)
    assert seminorm(light, 1.0, 1).value == pytest.approx(2.0)


def test_third_order_seminorm_is_sampled_and_positive(newtonian_pair):
    estimate = seminorm(newtonian_pair, 1.0, 3)
    assert estimate.method == "sampled"
    assert estimate.value > seminorm(newtonian_pair, 1.0, 2).value


def test_seminorm_of_mismatched_decay_is_infinite(newtonian_pair):
    with pytest.raises(InfiniteSeminormError):
        seminorm(newtonian_pair, 1.5, 2)


def test_seminorm_of_slowly_decaying_profile_is_infinite():
    spec = smooth_system((1.0, 1.0), 2, SoftenedPower(coupling=1.0, alpha=1.0, softening=1.0), 1.5)
    with pytest.raises(InfiniteSeminormError):
        seminorm(spec, 1.5, 1)


def test_seminorm_of_bump_is_finite():
    spec = smooth_system((1.0, 1.0), 2, GaussianBump(amplitude=1.0, width=1.0), 3.0)
    estimate = seminorm(spec, 3.0, 2)
    assert math.isfinite(estimate.value) and estimate.value > 0.0


def test_zero_potential_seminorm_vanishes():
    assert seminorm(zero_potential_system(3, 2), 1.0, 2).value == 0.0


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("q", [0.0, 1.0, 5.0, 50.0])
def test_smooth_abs_tail_sandwich(alpha, q):
    lower, value, upper = smooth_abs_tail(alpha, q)
    assert lower <= value <= upper


def test_smooth_abs_tail_domain():
    with pytest.raises(DomainError):
        smooth_abs_tail(0.0, 1.0)
    with pytest.raises(DomainError):
        smooth_abs_tail(1.0, -1.0)


def test_invalid_system_definitions():
    with pytest.raises(ConfigurationError, match="masses.1"):
        homogeneous_system((1.0, -1.0), 2, 1.0, -1.0)
    with pytest.raises(ConfigurationError):
        homogeneous_system((1.0,), 2, 1.0, -1.0)
    with pytest.raises(ConfigurationError):
        homogeneous_system((1.0, 1.0), 2, 1.0, [[0.0, 1.0], [2.0, 0.0]])
    with pytest.raises(ConfigurationError):
        PhaseState(p=[1.0, 2.0], q=[1.0])


def test_check_collision_only_for_singular_potentials(newtonian_pair):
    with pytest.raises(CollisionError):
        check_collision(newtonian_pair, [0.5, 0.5, 0.5, 0.5])
    check_collision(newtonian_pair, [0.0, 0.0, 0.5, 0.5])
    check_collision(smooth_system((1.0, 1.0), 2, GaussianBump(amplitude=1.0, width=1.0), 3.0), [0.5, 0.5, 0.5, 0.5])


def test_smooth_abs():
    assert smooth_abs(0.0) == 1.0
    assert_allclose(smooth_abs(np.array([3.0, -4.0])), [math.sqrt(10.0), math.sqrt(17.0)])


@settings(max_examples=40, deadline=None)
@given(coordinates, st.lists(st.floats(min_value=-100.0, max_value=100.0, allow_nan=False), min_size=2, max_size=2))
def test_energy_is_translation_invariant(values, shift):
    spec = homogeneous_system((1.0, 2.0, 3.0), 2, 0.7, -1.3)
    q = np.array(values)
    assume(pair_distances(spec, q).min() > 0.5)
    moved = q + np.tile(shift, 3)
    p = np.array([0.3, -0.1, 0.2, 0.5, -1.0, 0.4])
    assert potential_energy(spec, moved) == pytest.approx(potential_energy(spec, q), rel=1e-9, abs=1e-12)
    assert hamiltonian(spec, PhaseState(p=p, q=moved)) == pytest.approx(
        hamiltonian(spec, PhaseState(p=p, q=q)), rel=1e-9, abs=1e-12)
    assert_allclose(potential_gradient(spec, moved), potential_gradient(spec, q), rtol=1e-8, atol=1e-10)


def _pair_supremands(spec, alpha, Q):
    """|Q|^(alpha+1) |grad V| and |Q|^(alpha+2) |d_a d_b V| for the pair (0, 1) at separation Q."""
    d = Q.shape[0]
    q = np.concatenate([np.zeros(d), Q])
    r = float(np.linalg.norm(Q))
    first = r ** (alpha + 1.0) * float(np.linalg.norm(potential_gradient(spec, q)[d:]))
    hessian = np.array([potential_hessian_apply(spec, q, np.concatenate([np.zeros(d), e]))[d:] for e in np.eye(d)])
    return first, r ** (alpha + 2.0) * np.abs(hessian)


@pytest.mark.parametrize("scale", [0.1, 1.0, 10.0])
def test_seminorm_supremand_is_scale_invariant(scale):
    alpha = 1.5
    spec = homogeneous_system((1.0, 1.0), 2, alpha, 0.8)
    direction = np.array([0.6, -0.8])
    first, second = _pair_supremands(spec, alpha, scale * direction)
    unit_first, unit_second = _pair_supremands(spec, alpha, direction)
    assert first == pytest.approx(unit_first, rel=1e-10)
    assert_allclose(second, unit_second, rtol=1e-10, atol=1e-12)
    assert first == pytest.approx(seminorm(spec, alpha, 1).value)
    assert second.sum() <= seminorm(spec, alpha, 2).value * (1.0 + 1e-12)
