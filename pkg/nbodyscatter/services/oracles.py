"""Analytic ground truth for the numerical services.

Kepler two-body conics, the one-dimensional closed forms for a repulsive
homogeneous pair, central configurations, and asymptote fitting.
"""
from dataclasses import dataclass
import logging
import math

import numpy as np
from scipy import optimize

from ..errors import (
    ConfigurationError,
    DegenerateConfigurationError,
    DomainError,
    InsufficientEscapeError,
    KeplerParameterError,
)
from ..models import AsymptoteFit, CentralConfigurationReport, KeplerHyperbola, PhaseState
from .nbody_core import homogeneous_system, pair_distances, potential_gradient
from .scattering import angle_between

logger = logging.getLogger(__name__)

KEPLER_NEWTON_TOL = 1e-14


# Kepler Oracle

def _reduced(masses):
    m1, m2 = (float(m) for m in masses)
    if not (m1 > 0 and m2 > 0):
        raise ConfigurationError(f"masses: two positive masses required, got {masses}")
    return m1, m2, m1 * m2 / (m1 + m2)


def _rotation(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def kepler_hyperbolic_state(masses=(1.0, 1.0), coupling=-1.0, energy=0.5, angular_momentum=None,
                            impact_parameter=None, time_from_periapsis=0.0, d=2, periapsis_angle=0.0):
    """
    A two-body state on a Kepler hyperbola, in the center-of-mass frame.

    The pair potential is coupling / |q1 - q2|; negative coupling attracts.
    Exactly one of angular_momentum and impact_parameter must be given.

    Args:
        masses: (m1, m2)
        coupling: I_12
        energy: relative energy h > 0
        angular_momentum: L > 0
        impact_parameter: b > 0, with L = mu v_inf b
        time_from_periapsis: negative values give the incoming branch
        d: ambient dimension, >= 2; the orbit lies in the first two coordinates
        periapsis_angle: rotation of the periapsis direction in that plane

    Returns:
        (PhaseState, KeplerHyperbola)

    Raises:
        KeplerParameterError: h <= 0 or no conic for the given data
    """
    m1, m2, mu = _reduced(masses)
    if not energy > 0:
        raise KeplerParameterError(f"energy: hyperbolic orbits need h > 0, got {energy}")
    if coupling == 0:
        raise KeplerParameterError("coupling: a zero coupling has no conic")
    if (angular_momentum is None) == (impact_parameter is None):
        raise ConfigurationError("give exactly one of angular_momentum and impact_parameter")
    k = abs(float(coupling))
    v_inf = math.sqrt(2.0 * energy / mu)
    if angular_momentum is None:
        angular_momentum = mu * v_inf * float(impact_parameter)
    L = float(angular_momentum)
    if not L > 0:
        raise KeplerParameterError(f"angular_momentum: must be positive, got {L}")

    a = k / (2.0 * energy)
    e = math.sqrt(1.0 + 2.0 * energy * L * L / (mu * k * k))
    n = math.sqrt(k / (mu * a ** 3))
    sign = -1.0 if coupling < 0 else 1.0
    rot = _rotation(periapsis_angle)
    incoming = rot @ np.array([-sign, math.sqrt(e * e - 1.0)]) / e
    outgoing = rot @ np.array([sign, math.sqrt(e * e - 1.0)]) / e
    hyperbola = KeplerHyperbola(
        masses=(m1, m2),
        reduced_mass=mu,
        coupling=float(coupling),
        energy=float(energy),
        angular_momentum=L,
        eccentricity=e,
        semi_major_axis=a,
        mean_motion=n,
        asymptotic_speed=v_inf,
        impact_parameter=L / (mu * v_inf),
        incoming_direction=incoming,
        outgoing_direction=outgoing,
        periapsis_angle=float(periapsis_angle),
    )
    logger.debug(f"Kepler hyperbola: e={e:.6f}, a={a:.6f}, deflection={hyperbola.deflection_angle:.6f}")
    return kepler_state_at(hyperbola, time_from_periapsis, d), hyperbola


def _hyperbolic_anomaly(hyperbola, t):
    e = hyperbola.eccentricity
    M = hyperbola.mean_motion * float(t)
    s = 1.0 if hyperbola.attractive else -1.0
    # attractive: e sinh H - H = M; repulsive: e sinh H + H = M
    return optimize.newton(
        lambda H: e * math.sinh(H) - s * H - M,
        math.asinh(M / e),
        fprime=lambda H: e * math.cosh(H) - s,
        tol=KEPLER_NEWTON_TOL,
        maxiter=200,
    )


def kepler_relative(hyperbola, t):
    """Relative position x = q1 - q2 and velocity at time t from periapsis, in the orbital plane."""
    a, e, n = hyperbola.semi_major_axis, hyperbola.eccentricity, hyperbola.mean_motion
    H = _hyperbolic_anomaly(hyperbola, t)
    root = math.sqrt(e * e - 1.0)
    if hyperbola.attractive:
        H_dot = n / (e * math.cosh(H) - 1.0)
        x = np.array([a * (e - math.cosh(H)), a * root * math.sinh(H)])
        x_dot = np.array([-a * math.sinh(H), a * root * math.cosh(H)]) * H_dot
    else:
        H_dot = n / (e * math.cosh(H) + 1.0)
        x = np.array([a * (e + math.cosh(H)), a * root * math.sinh(H)])
        x_dot = np.array([a * math.sinh(H), a * root * math.cosh(H)]) * H_dot
    rot = _rotation(hyperbola.periapsis_angle)
    return rot @ x, rot @ x_dot


def _two_body_state(masses, x, x_dot, d):
    m1, m2, mu = _reduced(masses)
    total = m1 + m2
    if d < 2:
        raise ConfigurationError(f"d: planar conics need d >= 2, got {d}")
    rel = np.zeros(d)
    rel_dot = np.zeros(d)
    rel[:2], rel_dot[:2] = x, x_dot
    q = np.concatenate([(m2 / total) * rel, -(m1 / total) * rel])
    p = np.concatenate([mu * rel_dot, -mu * rel_dot])
    return PhaseState(p=p, q=q)


def kepler_state_at(hyperbola, t, d=2):
    """Two-body PhaseState on the hyperbola at time t from periapsis."""
    x, x_dot = kepler_relative(hyperbola, t)
    return _two_body_state(hyperbola.masses, x, x_dot, d)


def kepler_elliptic_state(masses=(1.0, 1.0), coupling=-1.0, energy=-0.5, angular_momentum=0.5, d=2):
    """Two-body state at periapsis of a bound Kepler ellipse (h < 0, attractive coupling)."""
    _, _, mu = _reduced(masses)
    if not (energy < 0 and coupling < 0):
        raise KeplerParameterError("elliptic orbits need h < 0 and an attractive coupling")
    k = -float(coupling)
    a = k / (-2.0 * energy)
    e2 = 1.0 + 2.0 * energy * angular_momentum ** 2 / (mu * k * k)
    if e2 < 0:
        raise KeplerParameterError(f"angular momentum {angular_momentum} too large for energy {energy}")
    r_p = a * (1.0 - math.sqrt(e2))
    speed = angular_momentum / (mu * r_p)
    return _two_body_state(masses, np.array([r_p, 0.0]), np.array([0.0, speed]), d)


# One-Dimensional Repulsive Pair
#
# H = p^2 / 2 + I / x^alpha on the half-line x > 0, realized as two bodies of
# mass 2 at -x/2 and x/2 so that the reduced mass is one.

@dataclass(frozen=True)
class HerbstProfiles:
    """
    Closed-form comparison curves for the 1-D repulsive pair.

    The evaluators use plain arithmetic, so they also accept sympy symbols.
    """

    alpha: float
    coupling: float
    p_plus: float
    q0: float

    @property
    def first_method_coefficient(self):
        """Coefficient of t^(1-alpha) in z1."""
        return -self.coupling / ((1 - self.alpha) * self.p_plus ** (1 + self.alpha))

    @property
    def second_method_coefficient(self):
        """Coefficient of t^(1-alpha) in q1; alpha times the first-method one."""
        return -self.alpha * self.coupling / ((1 - self.alpha) * self.p_plus ** (1 + self.alpha))

    def first_method(self, t):
        """z1(t) = p+ t - I / ((1-alpha) p+^(1+alpha)) t^(1-alpha)."""
        return self.p_plus * t + self.first_method_coefficient * t ** (1 - self.alpha)

    def second_method(self, t):
        """q1(t) = p+ t - alpha I / ((1-alpha) p+^(1+alpha)) t^(1-alpha) + q0."""
        return self.p_plus * t + self.second_method_coefficient * t ** (1 - self.alpha) + self.q0

    def true_asymptotic(self, t, shift=0):
        """
        Leading behavior of the orbit that starts at q0 at t = 0:

        p+ t - I ((q0 + p+ t)^(1-alpha) - q0^(1-alpha)) / ((1-alpha) p+^2) + q0 + shift.

        The true orbit differs from it by a constant plus o(1); shift absorbs the constant.
        """
        exponent = 1 - self.alpha
        drift = self.coupling * ((self.q0 + self.p_plus * t) ** exponent - self.q0 ** exponent)
        return self.p_plus * t - drift / (exponent * self.p_plus ** 2) + self.q0 + shift


def herbst_profiles(alpha, coupling, p_plus, q0=0.0):
    """
    Comparison curves of the two classical long-range constructions in 1-D.

    Raises:
        DomainError: alpha outside (1/2, 1), coupling <= 0 or p_plus <= 0
    """
    if not 0.5 < alpha < 1.0:
        raise DomainError(f"herbst_profiles: alpha must lie in (1/2, 1), got {alpha}")
    if not coupling > 0:
        raise DomainError(f"herbst_profiles: repulsive coupling I > 0 required, got {coupling}")
    if not p_plus > 0:
        raise DomainError(f"herbst_profiles: p_plus must be positive, got {p_plus}")
    return HerbstProfiles(alpha=float(alpha), coupling=float(coupling), p_plus=float(p_plus), q0=float(q0))


def herbst_system(alpha, coupling, d=1):
    return homogeneous_system((2.0, 2.0), d, alpha, coupling)


def herbst_state(p, x, d=1):
    """PhaseState with relative momentum p and separation x along the first axis."""
    q = np.zeros(2 * d)
    mom = np.zeros(2 * d)
    q[0], q[d] = -0.5 * x, 0.5 * x
    mom[0], mom[d] = -p, p
    return PhaseState(p=mom, q=q)


def herbst_relative(state, d=1):
    """(p, x) of a state built by herbst_state."""
    return float(state.p[d]), float(state.q[d] - state.q[0])


def herbst_relative_path(qs, ps, d=1):
    """Vectorized herbst_relative over trajectory arrays."""
    qs, ps = np.asarray(qs), np.asarray(ps)
    return ps[:, d], qs[:, d] - qs[:, 0]


# Central Configurations

def is_central_configuration(spec, x, tol=1e-8, require_force=False):
    """
    Whether q is linearly dependent on M^-1 grad V(q).

    Args:
        spec: SystemSpec
        x: configuration vector in R^{dn}
        tol: angular tolerance in radians
        require_force: raise instead of reporting a vanishing gradient

    Returns:
        CentralConfigurationReport; degenerate when the gradient vanishes

    Raises:
        DegenerateConfigurationError: vanishing gradient with require_force
    """
    x = np.asarray(x, dtype=float)
    scale = float(np.linalg.norm(x))
    if scale == 0.0:
        raise DomainError("is_central_configuration: zero configuration")
    g = spec.velocities(potential_gradient(spec, x))
    if float(np.linalg.norm(g)) <= np.finfo(float).eps * scale:
        if require_force:
            raise DegenerateConfigurationError("is_central_configuration: the force vanishes at this configuration")
        logger.info("Central-configuration test: gradient vanishes")
        return CentralConfigurationReport(is_central=False, angle=math.nan, degenerate=True)
    angle = angle_between(x, g)
    return CentralConfigurationReport(is_central=bool(angle < tol or angle > math.pi - tol), angle=angle)


# Asymptote Fitting

def fit_asymptote(traj, tol=1e-2, window=8, log_term=True, spec=None):
    """
    Fit q(t) ~ a t + b log t + c to the late samples of a trajectory.

    The candidate asymptote is the line c + s a; residual_trend holds the
    distance of each late sample to it. A log coefficient with a component
    orthogonal to a makes the distance grow like log t, so no asymptote exists.

    Args:
        traj: forward Trajectory
        tol: distance below which the last sample counts as on the line
        window: number of late samples used
        log_term: include the log t column
        spec: SystemSpec; enables log_sign relative to M^-1 grad V(a)

    Returns:
        AsymptoteFit

    Raises:
        InsufficientEscapeError: the configuration does not spread out
    """
    keep = traj.times > 0
    times, Q = traj.times[keep], traj.q[keep]
    if times.shape[0] < 4:
        raise InsufficientEscapeError("fit_asymptote: need at least four positive sample times")
    times, Q = times[-window:], Q[-window:]

    spread = np.linalg.norm(Q, axis=1) if spec is None else pair_distances(spec, Q).max(axis=1)
    if not spread[-1] > 2.0 * spread[0]:
        raise InsufficientEscapeError(f"fit_asymptote: configuration does not escape (spread {spread[-1]:.3e})")

    columns = [times, np.ones_like(times)]
    if log_term:
        columns.insert(1, np.log(times))
    A = np.column_stack(columns)
    scale = np.max(np.abs(A), axis=0)
    weights = np.sqrt(times / times[-1])
    coeffs, *_ = np.linalg.lstsq((A / scale) * weights[:, None], Q * weights[:, None], rcond=None)
    coeffs = coeffs / scale[:, None]
    velocity, offset = coeffs[0], coeffs[-1]
    log_vector = coeffs[1] if log_term else np.zeros_like(velocity)

    direction = velocity / np.linalg.norm(velocity)
    rel = Q - offset[None, :]
    distances = np.linalg.norm(rel - np.outer(rel @ direction, direction), axis=1)
    trend = tuple((float(t), float(r)) for t, r in zip(times, distances))

    roundoff = 1e-10 * float(np.max(np.abs(Q)))
    decreasing = distances[-1] <= max(distances[-3], roundoff)
    converges = bool(distances[-1] < tol and decreasing)

    orthogonal_log = log_vector - direction * float(log_vector @ direction)
    log_sign = 0
    if spec is not None and log_term:
        reference = spec.velocities(potential_gradient(spec, velocity))
        log_sign = int(np.sign(float(log_vector @ reference)))
    logger.debug(f"Asymptote fit over {times.shape[0]} samples: last distance {distances[-1]:.3e}")
    return AsymptoteFit(
        direction=direction,
        offset=offset,
        residual_trend=trend,
        converges=converges,
        log_coefficient=float(np.linalg.norm(orthogonal_log)),
        log_sign=log_sign,
        window=int(times.shape[0]),
    )
