"""The three dynamics: the n-body flow, the free flow and the Dollard flow."""
from itertools import pairwise
import logging
import math

import numpy as np
from scipy.integrate import quad, quad_vec, solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.special import hyp2f1

from ..errors import DegenerateVelocityError, DomainError
from ..models import PhaseState, Termination, TerminationKind, Trajectory
from .nbody_core import (
    check_collision,
    gradient_batch,
    hamiltonian_batch,
    pair_distances,
    smooth_abs,
)

logger = logging.getLogger(__name__)

VELOCITY_FLOOR = 1e-10
W_QUADRATURE_TOL = 1e-12
COLLISION_RADIUS_FACTOR = 1e-6


# n-body flow

def nbody_flow(spec, x0, t_span, cfg, t_eval=None):
    """
    Integrate Hamilton's equations q' = M^-1 p, p' = -grad V(q).

    Args:
        spec: SystemSpec
        x0: PhaseState at t_span[0]
        t_span: (t0, t1); t1 < t0 integrates backward
        cfg: IntegratorConfig
        t_eval: optional sample times; the start time is always included

    Returns:
        Trajectory, whose termination records a collision-radius stop or a
        step-size failure
    """
    x0.check_dimension(spec)
    check_collision(spec, x0.q)
    t0, t1 = float(t_span[0]), float(t_span[1])
    radius = _collision_radius(spec, x0, cfg)
    if t_eval is not None:
        t_eval = _sample_times(t0, t1, t_eval)

    if t0 == t1:
        y0 = x0.as_vector()
        return _build_trajectory(spec, np.array([t0]), y0[None, :], Termination(TerminationKind.COMPLETED), lambda t: y0)

    logger.debug(f"Integrating {spec.n}-body system over [{t0}, {t1}] with {cfg.method}")
    if cfg.method == "yoshida6":
        return _yoshida_flow(spec, x0, t0, t1, cfg, t_eval, radius)
    return _dop853_flow(spec, x0, t0, t1, cfg, t_eval, radius)


def _collision_radius(spec, x0, cfg):
    if not spec.potential.singular_at_collision:
        return None
    if cfg.collision_radius is not None:
        return cfg.collision_radius
    return COLLISION_RADIUS_FACTOR * float(pair_distances(spec, x0.q).min())


def _sample_times(t0, t1, t_eval):
    times = np.asarray(t_eval, dtype=float).ravel()
    lo, hi = min(t0, t1), max(t0, t1)
    times = np.unique(np.concatenate([[t0], times[(times >= lo) & (times <= hi)]]))
    return times if t1 >= t0 else times[::-1]


def _rhs_factory(spec):
    dim = spec.dim
    inv_mass = 1.0 / spec.mass_vector

    def rhs(t, y):
        return np.concatenate([y[dim:] * inv_mass, -gradient_batch(spec, y[:dim])])

    return rhs


def _dop853_flow(spec, x0, t0, t1, cfg, t_eval, radius):
    dim = spec.dim
    events = None
    if radius is not None:
        def collision(t, y):
            return float(pair_distances(spec, y[:dim]).min()) - radius

        collision.terminal = True
        collision.direction = -1
        events = [collision]

    sol = solve_ivp(
        _rhs_factory(spec),
        (t0, t1),
        x0.as_vector(),
        method="DOP853",
        t_eval=t_eval,
        dense_output=True,
        events=events,
        rtol=cfg.rel_tol,
        atol=cfg.abs_tol,
        max_step=cfg.max_step,
    )
    times = np.asarray(sol.t, dtype=float)
    Y = np.asarray(sol.y, dtype=float).T

    if sol.status == 1:
        t_hit = float(sol.t_events[0][0])
        if times.size == 0 or times[-1] != t_hit:
            times = np.append(times, t_hit)
            Y = np.vstack([Y.reshape(-1, 2 * dim), sol.y_events[0][0]])
        termination = Termination(TerminationKind.COLLISION, t_hit)
        logger.info(f"Collision radius {radius:.3e} reached at t={t_hit}")
    elif sol.status == -1:
        t_fail = float(times[-1]) if times.size else t0
        termination = Termination(TerminationKind.STEP_FAILURE, t_fail)
        logger.warning(f"Integrator gave up at t={t_fail}: {sol.message}")
    else:
        termination = Termination(TerminationKind.COMPLETED)

    if times.size == 0 or times[0] != t0:
        times = np.concatenate([[t0], times])
        Y = np.vstack([x0.as_vector(), Y.reshape(-1, 2 * dim)])
    Y[0] = x0.as_vector()
    dense = sol.sol if sol.sol is not None else _constant_dense(x0)
    return _build_trajectory(spec, times, Y, termination, dense)


def _constant_dense(x0):
    y0 = x0.as_vector()
    return lambda t: y0


def composition_weights(order):
    """
    Leapfrog sub-step weights of a symmetric triple-jump composition.

    Each pass raises the order by two: a scheme of order 2k is applied three
    times with weights z1, z0, z1 where z1 = 1/(2 - 2^(1/(2k+1))) and
    z0 = 1 - 2 z1.
    """
    if order < 2 or order % 2:
        raise DomainError(f"composition_weights: order must be even and >= 2, got {order}")
    weights = np.array([1.0])
    for k in range(1, order // 2):
        root = 2.0 ** (1.0 / (2 * k + 1))
        z1 = 1.0 / (2.0 - root)
        z0 = -root / (2.0 - root)
        weights = np.concatenate([z1 * weights, z0 * weights, z1 * weights])
    return weights


YOSHIDA6_WEIGHTS = composition_weights(6)


def _yoshida_flow(spec, x0, t0, t1, cfg, t_eval, radius):
    dim = spec.dim
    inv_mass = 1.0 / spec.mass_vector
    n_steps = max(1, math.ceil(abs(t1 - t0) / cfg.step))
    grid = t0 + (t1 - t0) * np.arange(n_steps + 1) / n_steps
    grid[-1] = t1
    if t_eval is not None:
        grid = np.unique(np.concatenate([grid, t_eval]))
        if t1 < t0:
            grid = grid[::-1]

    q = x0.q.copy()
    p = x0.p.copy()
    grad = gradient_batch(spec, q)
    rows = [np.concatenate([q, p])]
    slopes = [np.concatenate([p * inv_mass, -grad])]
    termination = Termination(TerminationKind.COMPLETED)
    reached = [grid[0]]
    for t_prev, t_next in pairwise(grid):
        h = t_next - t_prev
        for w in YOSHIDA6_WEIGHTS:
            hw = w * h
            p = p - 0.5 * hw * grad
            q = q + hw * p * inv_mass
            grad = gradient_batch(spec, q)
            p = p - 0.5 * hw * grad
        rows.append(np.concatenate([q, p]))
        slopes.append(np.concatenate([p * inv_mass, -grad]))
        reached.append(t_next)
        if radius is not None and float(pair_distances(spec, q).min()) < radius:
            termination = Termination(TerminationKind.COLLISION, float(t_next))
            logger.info(f"Collision radius {radius:.3e} reached at t={t_next}")
            break

    reached = np.asarray(reached)
    Y = np.asarray(rows)
    dY = np.asarray(slopes)
    order = np.argsort(reached)
    spline = CubicHermiteSpline(reached[order], Y[order], dY[order], axis=0)

    if t_eval is not None:
        keep = np.isin(reached, t_eval)
        if not termination.completed:
            keep[-1] = True
        reached, Y = reached[keep], Y[keep]
    return _build_trajectory(spec, reached, Y, termination, spline)


def _build_trajectory(spec, times, Y, termination, dense):
    dim = spec.dim
    q = np.ascontiguousarray(Y[:, :dim])
    p = np.ascontiguousarray(Y[:, dim:])
    energy = hamiltonian_batch(spec, q, p)
    drift = float(np.max(np.abs(energy - energy[0])))
    for arr in (times, q, p, energy):
        arr.setflags(write=False)
    return Trajectory(
        times=times,
        q=q,
        p=p,
        energy=energy,
        energy_drift=drift,
        termination=termination,
        dense_eval=dense,
    )


# Free flow

def free_flow(spec, x0, t):
    """Phi0_t(p, q) = (p, q + t M^-1 p)."""
    return PhaseState(p=x0.p, q=x0.q + float(t) * spec.velocities(x0.p))


def free_flow_path(spec, x0, times):
    """Free-flow positions at several times, one row per time."""
    times = np.asarray(times, dtype=float)
    return x0.q[None, :] + times[:, None] * spec.velocities(x0.p)[None, :]


# Dollard flow

def _check_alpha(alpha):
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"f_alpha: alpha must lie in (0, 1], got {alpha}")


def f_alpha_series(alpha, t):
    """Hypergeometric form t * 2F1(1/2, alpha/2; 3/2; -t^2)."""
    _check_alpha(alpha)
    t = float(t)
    return t * float(hyp2f1(0.5, 0.5 * alpha, 1.5, -t * t))


def f_alpha_quadrature(alpha, t):
    """Adaptive quadrature of <s>^-alpha over [0, t]."""
    _check_alpha(alpha)
    t = float(t)
    value, _ = quad(lambda s: smooth_abs(s) ** (-alpha), 0.0, abs(t), epsabs=1e-13, epsrel=1e-13, limit=500)
    return math.copysign(value, t)


def f_alpha(alpha, t):
    """
    f_alpha(t) = integral of <s>^-alpha over [0, t], odd in t.

    Uses the hypergeometric series for |t| < 1, the closed form asinh(t) when
    alpha = 1, and f_alpha(1) plus quadrature over [1, |t|] otherwise.

    Args:
        alpha: exponent in (0, 1]
        t: scalar or array of times

    Returns:
        float, or an array shaped like t
    """
    _check_alpha(alpha)
    if np.ndim(t) > 0:
        flat = [f_alpha(alpha, float(s)) for s in np.ravel(t)]
        return np.array(flat).reshape(np.shape(t))
    t = float(t)
    a = abs(t)
    if a < 1.0:
        value = a * float(hyp2f1(0.5, 0.5 * alpha, 1.5, -a * a))
    elif alpha == 1.0:
        value = math.asinh(a)
    else:
        tail, _ = quad(lambda s: smooth_abs(s) ** (-alpha), 1.0, a, epsabs=1e-13, epsrel=1e-13, limit=500)
        value = f_alpha_series(alpha, 1.0) + tail
    return math.copysign(value, t)


def check_velocity_floor(spec, p, floor=VELOCITY_FLOOR):
    """Raise DegenerateVelocityError when two bodies of M^-1 p move (almost) together."""
    v = spec.velocities(p)
    v_min = float(pair_distances(spec, v).min())
    if v_min < floor:
        raise DegenerateVelocityError(f"velocity pair separation {v_min:.3e} below floor {floor:.1e}")
    return v_min


def dollard_W(spec, p, t, velocity_floor=VELOCITY_FLOOR, method="auto"):
    """
    W(t; p) = integral over [0, t] of grad_p V(<s> M^-1 p) ds.

    For a homogeneous potential of degree -alpha with alpha <= 1 this factors
    as f_alpha(t) M^-1 grad V(M^-1 p); other potentials use adaptive
    Gauss-Kronrod quadrature.

    Args:
        spec: SystemSpec
        p: momentum vector in R^{dn}
        t: time
        velocity_floor: minimum admissible pair speed of M^-1 p
        method: "auto", "closed_form" or "quadrature"

    Returns:
        vector in R^{dn}
    """
    if method not in ("auto", "closed_form", "quadrature"):
        raise DomainError(f"dollard_W: unknown method {method!r}")
    p = np.asarray(p, dtype=float)
    if spec.potential.is_zero:
        return np.zeros(spec.dim)
    check_velocity_floor(spec, p, velocity_floor)
    v = spec.velocities(p)
    t = float(t)

    closed_form = spec.potential.is_homogeneous and spec.alpha <= 1.0
    if method == "closed_form" and not closed_form:
        raise DomainError("dollard_W: closed form needs a homogeneous potential with alpha <= 1")
    if closed_form and method != "quadrature":
        return f_alpha(spec.alpha, t) * spec.velocities(gradient_batch(spec, v))

    if t == 0.0:
        return np.zeros(spec.dim)

    def integrand(s):
        w = float(smooth_abs(s))
        return w * spec.velocities(gradient_batch(spec, w * v))

    value, _ = quad_vec(integrand, 0.0, abs(t), epsabs=W_QUADRATURE_TOL, epsrel=W_QUADRATURE_TOL, norm="max")
    return math.copysign(1.0, t) * value


def dollard_flow(spec, x, s, t):
    """
    Dollard flow Phi^D_{t,s}(p, q) = (p, q + (t v + W(t; p)) - (s v + W(s; p))).

    The momentum is passed through untouched.
    """
    s, t = float(s), float(t)
    if s == t:
        return x
    v = spec.velocities(x.p)
    shift = (t - s) * v + (dollard_W(spec, x.p, t) - dollard_W(spec, x.p, s))
    return PhaseState(p=x.p, q=x.q + shift)
