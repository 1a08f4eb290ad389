"""Asymptotic data and the Moller / Dollard-Moller transform suite.

Forward objects are computed directly; backward ones (direction = -1) are
conjugated by the time reversal R(p, q) = (-p, q), which maps the flow of an
even pair potential onto itself with reversed time.
"""
from dataclasses import replace
import logging
import math

import numpy as np
from scipy.integrate import quad_vec
from scipy.interpolate import PchipInterpolator

from ..errors import (
    BackwardCollisionError,
    CollisionError,
    ContractionFailureError,
    DomainError,
    IntegrationError,
    NBodyScatterError,
    NonConvergenceError,
    NotFreeError,
    StencilFailureError,
    UnequalMomentaError,
)
from ..models import (
    Comparison,
    OffsetResult,
    PhaseState,
    ScatteringDatum,
    ScatteringMapResult,
    SynchronizationReport,
    TerminationKind,
    TransformMethod,
    TransformResult,
)
from .flows import dollard_flow, dollard_W, free_flow, nbody_flow
from .free_region import default_params, membership, reverse_momenta
from .limits import dyadic_checkpoints, expansion_terms, extrapolate, fit_power_law
from .nbody_core import gradient_batch, hamiltonian, kinetic_energy, pair_stats, seminorm

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-8
FIXED_POINT_NODES_PER_OCTAVE = 16
FIXED_POINT_OCTAVES = 24
FIXED_POINT_GAUSS_POINTS = 8
CONTRACTION_RATIO_LIMIT = 0.95


# Checkpoint sampling

def _check_direction(direction):
    if direction not in (1, -1):
        raise DomainError(f"direction must be +1 or -1, got {direction}")


def _checkpoint_samples(spec, x0, cfg, checkpoints):
    """Integrate forward and return (times, Q, P) at the checkpoints."""
    traj = nbody_flow(spec, x0, (0.0, float(checkpoints[-1])), cfg, t_eval=checkpoints)
    kind = traj.termination.kind
    if kind is TerminationKind.COLLISION:
        raise CollisionError(f"orbit reached the collision radius at t={traj.termination.time}", traj.termination.time)
    if kind is TerminationKind.STEP_FAILURE:
        raise IntegrationError(f"integration failed at t={traj.termination.time}", traj.termination.time)
    rows = np.isin(traj.times, checkpoints)
    return traj.times[rows], traj.q[rows], traj.p[rows]


def momentum_tail_bound(spec, alpha, stats):
    """Bound 2 m_max |V|^(alpha,1) / (alpha v_min q_min^alpha) on |p(t) - p+| inside F+_loc."""
    norm1 = seminorm(spec, alpha, 1).value
    if norm1 == 0.0:
        return 0.0
    return spec.m_max * 2.0 * norm1 / (alpha * stats.v_min * stats.q_min ** alpha)


def _decay_rate(times, sequence, limit, log_corrected=False):
    """Positive decay exponent of |a(t_k) - a_inf|, or None when too few points rise above roundoff."""
    deviation = np.linalg.norm(np.asarray(sequence) - limit, axis=1)
    scale = max(float(np.max(np.abs(sequence))), 1.0)
    usable = deviation > 1e3 * np.finfo(float).eps * scale
    cut = max(3, deviation.shape[0] - 2)
    usable[cut:] = False
    fit = fit_power_law(times[usable], deviation[usable], log_corrected=log_corrected)
    return None if fit is None else -fit.slope


def _escape_record(spec, x0, cfg, checkpoints, params):
    """Checkpoint samples, momentum limit and tail bound of one forward orbit."""
    times, Q, P = _checkpoint_samples(spec, x0, cfg, checkpoints)
    reports = [membership(spec, params, PhaseState(p=p, q=q)) for p, q in zip(P, Q)]
    inside = np.array([r.inside for r in reports])
    if inside.any():
        first = int(np.argmax(inside))
        last = int(np.flatnonzero(inside)[-1])
        if last != len(inside) - 1:
            logger.warning(f"Orbit left the finally free region after t={times[last]}")
        stats = pair_stats(spec, PhaseState(p=P[last], q=Q[last]))
        tail = momentum_tail_bound(spec, params.alpha, stats)
        entry = float(times[first])
    else:
        first, tail, entry = None, math.inf, None
    start = 0 if first is None else min(first, len(times) - 2)
    momentum = extrapolate(times[start:], P[start:], expansion_terms("momentum", spec.alpha))
    return times, Q, P, momentum, tail, entry, start


# Asymptotic velocity

def asymptotic_velocity(spec, x0, cfg, horizon, params=None, tol=DEFAULT_TOLERANCE, t_first=1.0, direction=1,
                        require_free=False):
    """
    Asymptotic momentum p+ = lim p(t) with a rigorous tail bound.

    p(t) is sampled at dyadic checkpoints and extrapolated; the tail bound is
    evaluated at the last checkpoint inside F+_loc. An orbit that never
    enters F+_loc by the horizon yields converged=False (or NotFreeError with
    require_free).

    Args:
        spec: SystemSpec
        x0: initial PhaseState
        cfg: IntegratorConfig
        horizon: last checkpoint time
        params: FreeRegionParams, default_params(spec) when None
        tol: convergence threshold on the extrapolation residual
        t_first: first checkpoint
        direction: +1 for p+, -1 for p-
        require_free: raise NotFreeError instead of reporting converged=False

    Returns:
        ScatteringDatum
    """
    _check_direction(direction)
    if direction == -1:
        datum = asymptotic_velocity(spec, reverse_momenta(x0), cfg, horizon, params, tol, t_first, 1, require_free)
        return replace(datum, p_plus=-datum.p_plus)

    checkpoints = dyadic_checkpoints(t_first, horizon)
    if spec.potential.is_zero:
        return ScatteringDatum(p_plus=x0.p.copy(), tail_bound=0.0, offset=x0.q.copy(), converged=True,
                               rate_estimate=None, residual=0.0, entry_time=0.0, horizon=float(horizon),
                               checkpoints=checkpoints)

    params = params or default_params(spec)
    times, Q, P, momentum, tail, entry, start = _escape_record(spec, x0, cfg, checkpoints, params)
    if entry is None:
        message = f"orbit did not enter the finally free region by t={times[-1]}"
        if require_free:
            raise NotFreeError(message)
        logger.warning(f"asymptotic_velocity: {message}")
        return ScatteringDatum(p_plus=P[-1].copy(), tail_bound=math.inf, offset=None, converged=False,
                               rate_estimate=None, residual=momentum.residual, entry_time=None,
                               horizon=float(horizon), checkpoints=checkpoints)

    rate = _decay_rate(times[start:], P[start:], momentum.limit)
    offset = None
    if spec.alpha > 0.5:
        comparison = Comparison.FREE if spec.alpha > 1.0 else Comparison.DOLLARD
        sequence = _position_sequence(spec, times[start:], Q[start:], P[start:], comparison)
        offset = extrapolate(times[start:], sequence, _position_terms(spec.alpha, comparison)).limit
    converged = momentum.residual < tol
    logger.info(f"Asymptotic momentum: residual {momentum.residual:.3e}, tail bound {tail:.3e}, entry t={entry}")
    return ScatteringDatum(
        p_plus=momentum.limit,
        tail_bound=tail,
        offset=offset,
        converged=converged,
        rate_estimate=rate,
        residual=momentum.residual,
        entry_time=entry,
        horizon=float(horizon),
        checkpoints=checkpoints,
    )


def energy_at_infinity_gap(spec, datum, x0):
    """|K(p+) - H(x0)|; zero up to the tail bound for escaping orbits."""
    return abs(kinetic_energy(spec, datum.p_plus) - hamiltonian(spec, x0))


# Inverse transforms

def _position_terms(alpha, comparison):
    quantity = "dollard_position" if comparison is Comparison.DOLLARD else "free_position"
    return expansion_terms(quantity, alpha)


def _position_sequence(spec, times, Q, P, comparison):
    """q(T) - T v(T), minus W(T; p(T)) for the Dollard comparison."""
    V = P / spec.mass_vector
    sequence = Q - times[:, None] * V
    if comparison is Comparison.DOLLARD:
        sequence = sequence - np.array([dollard_W(spec, p, t) for t, p in zip(times, P)])
    return sequence


def _check_comparison_domain(spec, comparison):
    if spec.potential.is_zero:
        return
    if comparison is Comparison.DOLLARD and not spec.alpha > 0.5:
        raise DomainError(f"Dollard comparison needs alpha > 1/2, got {spec.alpha}")
    if comparison is Comparison.FREE and not spec.alpha > 1.0:
        raise DomainError(f"free comparison needs a short-range potential (alpha > 1), got {spec.alpha}")


def _inverse_moller(spec, x0, comparison, cfg, tol, horizon, t_first, direction, raise_on_failure):
    _check_direction(direction)
    _check_comparison_domain(spec, comparison)
    if direction == -1:
        result = _inverse_moller(spec, reverse_momenta(x0), comparison, cfg, tol, horizon, t_first, 1,
                                 raise_on_failure)
        return replace(result, image=reverse_momenta(result.image))

    if spec.potential.is_zero:
        return TransformResult(image=x0, method=TransformMethod.TIME_LIMIT, iterations_or_T=0.0, residual=0.0,
                               converged=True, comparison=comparison)

    checkpoints = dyadic_checkpoints(t_first, horizon)
    times, Q, P = _checkpoint_samples(spec, x0, cfg, checkpoints)
    momentum = extrapolate(times, P, expansion_terms("momentum", spec.alpha))
    sequence = _position_sequence(spec, times, Q, P, comparison)
    position = extrapolate(times, sequence, _position_terms(spec.alpha, comparison))
    residual = max(momentum.residual, position.residual)
    converged = residual < tol
    log_corrected = comparison is Comparison.DOLLARD and spec.alpha == 1.0
    rate = _decay_rate(times, sequence, position.limit, log_corrected=log_corrected)
    logger.info(f"Inverse {comparison.value} transform at T={times[-1]:.6g}: residual {residual:.3e}")
    if not converged:
        message = f"inverse {comparison.value} transform not converged: residual {residual:.3e} > {tol:.1e}"
        if raise_on_failure:
            raise NonConvergenceError(message, residual)
        logger.warning(message)
    return TransformResult(
        image=PhaseState(p=momentum.limit, q=position.limit),
        method=TransformMethod.TIME_LIMIT,
        iterations_or_T=float(times[-1]),
        residual=residual,
        converged=converged,
        rate_estimate=rate,
        comparison=comparison,
    )


def inverse_moller_dollard(spec, x0, direction, cfg, tol=DEFAULT_TOLERANCE, horizon=2.0 ** 17, t_first=1.0,
                           raise_on_failure=True):
    """
    Inverse Dollard-Moller transform lim_T Phi^D_{0,T} o Phi_T (x0).

    Evaluated at dyadic T as (p(T), q(T) - T v(T) - W(T; p(T))) and
    extrapolated in T.

    Args:
        spec: SystemSpec with alpha > 1/2
        x0: forward (direction=+1) or backward (direction=-1) free state
        direction: +1 or -1
        cfg: IntegratorConfig
        tol: residual threshold
        horizon: largest T
        t_first: first T
        raise_on_failure: raise NonConvergenceError when the residual exceeds tol

    Returns:
        TransformResult
    """
    return _inverse_moller(spec, x0, Comparison.DOLLARD, cfg, tol, horizon, t_first, direction, raise_on_failure)


def inverse_moller_free(spec, x0, direction, cfg, tol=DEFAULT_TOLERANCE, horizon=2.0 ** 14, t_first=1.0,
                        raise_on_failure=True):
    """Short-range inverse Moller transform lim_T (p(T), q(T) - T v(T))."""
    return _inverse_moller(spec, x0, Comparison.FREE, cfg, tol, horizon, t_first, direction, raise_on_failure)


def dollard_asymptote(spec, x0, cfg, horizon=2.0 ** 17, t_first=1.0, tol=DEFAULT_TOLERANCE):
    """
    Dollard datum whose comparison orbit tracks the true orbit.

    Returns (p+, Q) where Q is the constant term of the expansion of
    q(T) - T v+ - W(T; p+). For homogeneous potentials of degree -1 the
    sequence itself converges to Q. For alpha < 1 it also carries a drift
    c T^(1-alpha), which is fitted and left out of Q, so the comparison
    orbit from (p+, Q) separates from the true one at that rate.
    """
    _check_comparison_domain(spec, Comparison.DOLLARD)
    checkpoints = dyadic_checkpoints(t_first, horizon)
    times, Q, P = _checkpoint_samples(spec, x0, cfg, checkpoints)
    momentum = extrapolate(times, P, expansion_terms("momentum", spec.alpha))
    p_plus = momentum.limit
    v_plus = spec.velocities(p_plus)
    sequence = Q - times[:, None] * v_plus[None, :] - np.array([dollard_W(spec, p_plus, t) for t in times])
    terms = _position_terms(spec.alpha, Comparison.DOLLARD)
    if spec.alpha < 1.0:
        terms = [(spec.alpha - 1.0, 0)] + terms
    position = extrapolate(times, sequence, terms)
    residual = max(momentum.residual, position.residual)
    logger.info(f"Dollard asymptote datum at T={times[-1]:.6g}: residual {residual:.3e}")
    return TransformResult(
        image=PhaseState(p=p_plus, q=position.limit),
        method=TransformMethod.TIME_LIMIT,
        iterations_or_T=float(times[-1]),
        residual=residual,
        converged=residual < tol,
        comparison=Comparison.DOLLARD,
    )


def dollard_tracking_error(spec, x0, times, cfg, horizon=2.0 ** 17, t_first=1.0):
    """
    Distance between the Dollard comparison orbit and the true orbit.

    The comparison orbit starts from dollard_asymptote(x0).

    Returns:
        (position_errors, momentum_errors): Euclidean distances |q^D(t) - q(t)|
        and |p^D(t) - p(t)| at each requested time
    """
    times = np.asarray(times, dtype=float)
    datum = dollard_asymptote(spec, x0, cfg, horizon, t_first).image
    traj = nbody_flow(spec, x0, (0.0, float(times.max())), cfg, t_eval=times)
    if not traj.termination.completed:
        raise IntegrationError("dollard_tracking_error: reference orbit did not complete", traj.termination.time)
    rows = np.isin(traj.times, times)
    position_errors, momentum_errors = [], []
    for t, q, p in zip(traj.times[rows], traj.q[rows], traj.p[rows]):
        comparison = dollard_flow(spec, datum, 0.0, t)
        position_errors.append(float(np.linalg.norm(comparison.q - q)))
        momentum_errors.append(float(np.linalg.norm(comparison.p - p)))
    return np.array(position_errors), np.array(momentum_errors)


# Moller transforms

def _time_shift(spec, X0):
    """Time offset q_min / v_min of the free motion from X0; zero when some pair is at rest."""
    stats = pair_stats(spec, X0)
    if not stats.v_min > 0.0 or not math.isfinite(stats.q_min):
        return 0.0
    return stats.q_min / stats.v_min


def moller_time_limit(spec, X0, direction, comparison, cfg, tol=DEFAULT_TOLERANCE, horizon=2.0 ** 14, t_first=1.0,
                      raise_on_failure=True):
    """
    Moller transform lim_T Phi_{-T} o Phi^cmp_{T,0}(X0) by backward integration.

    The comparison flow is the free flow or the Dollard flow. Each dyadic T
    is integrated separately from T back to 0 and the images are
    extrapolated in T.

    Raises:
        BackwardCollisionError: a backward integration hit the collision radius
    """
    _check_direction(direction)
    _check_comparison_domain(spec, comparison)
    if direction == -1:
        result = moller_time_limit(spec, reverse_momenta(X0), 1, comparison, cfg, tol, horizon, t_first,
                                   raise_on_failure)
        return replace(result, image=reverse_momenta(result.image))

    if spec.potential.is_zero:
        return TransformResult(image=X0, method=TransformMethod.TIME_LIMIT, iterations_or_T=0.0, residual=0.0,
                               converged=True, comparison=comparison)

    checkpoints = dyadic_checkpoints(t_first, horizon)
    P, Q = [], []
    for T in checkpoints:
        if comparison is Comparison.FREE:
            start = free_flow(spec, X0, T)
        else:
            start = dollard_flow(spec, X0, 0.0, T)
        traj = nbody_flow(spec, start, (float(T), 0.0), cfg)
        kind = traj.termination.kind
        if kind is TerminationKind.COLLISION:
            raise BackwardCollisionError(
                f"backward orbit from T={T} reached the collision radius at t={traj.termination.time}",
                traj.termination.time,
            )
        if kind is TerminationKind.STEP_FAILURE:
            raise IntegrationError(f"backward integration from T={T} failed", traj.termination.time)
        P.append(traj.p[-1])
        Q.append(traj.q[-1])
        logger.debug(f"Time-limit image at T={T:.6g} computed")

    # The error of the T-image is a series in 1 / (T + tau), tau = q_min / v_min of X0.
    shifted = checkpoints + _time_shift(spec, X0)
    terms = _position_terms(spec.alpha, comparison)
    momentum = extrapolate(shifted, np.array(P), terms)
    position = extrapolate(shifted, np.array(Q), terms)
    residual = max(momentum.residual, position.residual)
    converged = residual < tol
    rate = _decay_rate(shifted, np.array(Q), position.limit)
    logger.info(f"Moller time limit ({comparison.value}) at T={checkpoints[-1]:.6g}: residual {residual:.3e}")
    if not converged:
        message = f"Moller time limit not converged: residual {residual:.3e} > {tol:.1e}"
        if raise_on_failure:
            raise NonConvergenceError(message, residual)
        logger.warning(message)
    return TransformResult(
        image=PhaseState(p=momentum.limit, q=position.limit),
        method=TransformMethod.TIME_LIMIT,
        iterations_or_T=float(checkpoints[-1]),
        residual=residual,
        converged=converged,
        rate_estimate=rate,
        comparison=comparison,
    )


def moller_short_range_fixed_point(spec, X0, tol=1e-10, max_iterations=200,
                                   nodes_per_octave=FIXED_POINT_NODES_PER_OCTAVE, octaves=FIXED_POINT_OCTAVES,
                                   gauss_points=FIXED_POINT_GAUSS_POINTS):
    """
    Short-range Moller transform by Picard iteration of r = F(r).

    (F r)(t) = -M^-1 integral over [t, inf) of (s - t) grad V(Q0 + s V0 + r(s)) ds.
    r lives on nodes t_j = tau0 (2^(j/m) - 1), tau0 = q_min / v_min, with
    monotone cubic interpolation in between and Gauss-Legendre quadrature per
    interval; beyond the last node r is frozen and the tail is integrated
    adaptively to infinity.

    Args:
        spec: SystemSpec with alpha > 1
        X0: PhaseState inside F+_loc (short-range parameters)
        tol: sup-norm threshold on successive iterates
        max_iterations: iteration cap
        nodes_per_octave: grid density m
        octaves: grid extent
        gauss_points: quadrature points per interval

    Returns:
        TransformResult with image (P0 + integral of grad V, Q0 + r(0))

    Raises:
        DomainError: alpha <= 1, X0 outside F+_loc, or |r| > q_min / 2
        ContractionFailureError: successive differences stop shrinking
    """
    if spec.potential.is_zero:
        return TransformResult(image=X0, method=TransformMethod.FIXED_POINT, iterations_or_T=1, residual=0.0,
                               converged=True, comparison=Comparison.FREE, tail_bound=0.0)
    alpha = spec.alpha
    if not alpha > 1.0:
        raise DomainError(f"fixed-point Moller transform needs alpha > 1, got {alpha}")
    params = default_params(spec, alpha, short_range_cap=True)
    if not membership(spec, params, X0).inside:
        raise DomainError("fixed-point Moller transform needs X0 inside the finally free region")

    stats = pair_stats(spec, X0)
    V0 = spec.velocities(X0.p)
    inv_mass = 1.0 / spec.mass_vector
    tau0 = stats.q_min / stats.v_min
    nodes = tau0 * (2.0 ** (np.arange(octaves * nodes_per_octave + 1) / nodes_per_octave) - 1.0)
    t_max = float(nodes[-1])

    x, w = np.polynomial.legendre.leggauss(gauss_points)
    a, b = nodes[:-1, None], nodes[1:, None]
    tq = 0.5 * (a + b) + 0.5 * (b - a) * x[None, :]
    wq = 0.5 * (b - a) * w[None, :]
    free_path = X0.q[None, None, :] + tq[..., None] * V0[None, None, :]

    r = np.zeros((nodes.shape[0], spec.dim))
    previous_diff = None
    worst_ratio = None
    converged = False
    diff = math.inf
    for iteration in range(1, max_iterations + 1):
        rq = PchipInterpolator(nodes, r, axis=0)(tq)
        g = gradient_batch(spec, free_path + rq)
        A = np.einsum("jk,jkd->jd", wq, g)
        B = np.einsum("jk,jkd->jd", wq * tq, g)
        r_last = r[-1]

        def tail_integrand(s):
            gs = gradient_batch(spec, X0.q + s * V0 + r_last)
            return np.concatenate([gs, s * gs])

        tail, _ = quad_vec(tail_integrand, t_max, np.inf, epsabs=1e-15, epsrel=1e-10, norm="max")
        A_suffix = np.concatenate([np.cumsum(A[::-1], axis=0)[::-1], np.zeros((1, spec.dim))]) + tail[:spec.dim]
        B_suffix = np.concatenate([np.cumsum(B[::-1], axis=0)[::-1], np.zeros((1, spec.dim))]) + tail[spec.dim:]
        new_r = -(B_suffix - nodes[:, None] * A_suffix) * inv_mass

        diff = float(np.max(np.abs(new_r - r)))
        r = new_r
        reach = float(np.max(np.linalg.norm(r.reshape(r.shape[0], spec.n, spec.d), axis=-1)))
        if reach > 0.5 * stats.q_min:
            raise DomainError(f"fixed-point iterate left the admissible ball: |r| = {reach:.3e}")
        logger.debug(f"Fixed-point iteration {iteration}: sup difference {diff:.3e}")
        if previous_diff is not None and previous_diff > 0:
            ratio = diff / previous_diff
            worst_ratio = ratio if worst_ratio is None else max(worst_ratio, ratio)
        if diff < tol:
            converged = True
            break
        if worst_ratio is not None and worst_ratio > CONTRACTION_RATIO_LIMIT:
            raise ContractionFailureError(
                f"fixed-point ratio {worst_ratio:.3f} exceeds {CONTRACTION_RATIO_LIMIT}", diff
            )
        previous_diff = diff

    if not converged:
        raise NonConvergenceError(f"fixed point not reached after {max_iterations} iterations", diff)
    if worst_ratio is not None:
        logger.info(f"Fixed point converged after {iteration} iterations, worst ratio {worst_ratio:.3e}")
    else:
        logger.info(f"Fixed point converged after {iteration} iterations")

    norm1 = seminorm(spec, alpha, 1).value * spec.m_min
    tail_bound = (4.0 * 2.0 * norm1 / (stats.v_min ** 2 * (alpha - 1.0))
                  * (stats.q_min + 0.5 * stats.v_min * t_max) ** (1.0 - alpha) / spec.m_min)
    image = PhaseState(p=X0.p + A_suffix[0], q=X0.q + r[0])
    return TransformResult(
        image=image,
        method=TransformMethod.FIXED_POINT,
        iterations_or_T=iteration,
        residual=diff,
        converged=True,
        rate_estimate=None,
        comparison=Comparison.FREE,
        tail_bound=tail_bound,
        contraction_ratio=worst_ratio,
    )


# Orbit comparisons

def _assert_equal_momenta(p1, p2, tail1, tail2, res1, res2):
    gap = float(np.max(np.abs(p1 - p2)))
    budget = tail1 + tail2 + res1 + res2
    if not math.isfinite(budget):
        budget = 1e-6 * max(1.0, float(np.max(np.abs(p1))))
    if gap > budget:
        raise UnequalMomentaError(f"asymptotic momenta differ by {gap:.3e}, beyond the budget {budget:.3e}")


def _perpendicular(w, v):
    return w - np.outer(w @ v, v) / float(v @ v) if w.ndim == 2 else w - v * float(w @ v) / float(v @ v)


def _momentum_mismatch(spec, times, P_a, P_b):
    """Limit of p(t; a) - p(t; b), extrapolated from the difference itself."""
    return extrapolate(times, P_a - P_b, expansion_terms("momentum", spec.alpha)).limit


def _aligned_difference(spec, times, Q_a, Q_b, p_b, mismatch):
    """
    q(t; a) - q(t; b) minus the drift that a residual momentum mismatch dp produces.

    The drift is t M^-1 dp, plus W(t; p_b + dp) - W(t; p_b) for long-range
    potentials; it vanishes when the asymptotic momenta agree exactly.
    """
    difference = Q_a - Q_b - times[:, None] * spec.velocities(mismatch)[None, :]
    if 0.5 < spec.alpha <= 1.0 and np.any(mismatch):
        difference = difference - np.array(
            [dollard_W(spec, p_b + mismatch, t) - dollard_W(spec, p_b, t) for t in times]
        )
    return difference


def asymptotic_offset(spec, x, x_ref, cfg, horizon=2.0 ** 17, t_first=1.0, tol=1e-7, params=None):
    """
    Orbit offset b = lim pi_perp (q(t; x) - q(t; x_ref)) for orbits with equal p+.

    pi_perp projects onto the Euclidean orthogonal complement of v+. A
    momentum mismatch within the tail budget is removed from the difference
    before extrapolation, so it does not leak into b as a linear drift.

    Raises:
        UnequalMomentaError: the asymptotic momenta differ beyond their tail bounds
    """
    checkpoints = dyadic_checkpoints(t_first, horizon)
    if spec.potential.is_zero:
        if not np.array_equal(x.p, x_ref.p):
            _assert_equal_momenta(x.p, x_ref.p, 0.0, 0.0, 0.0, 0.0)
        v = spec.velocities(x_ref.p)
        b = _perpendicular(x.q - x_ref.q, v)
        return OffsetResult(b=b, residual=0.0, converged=True, orthogonality=_orthogonality(b, v))

    params = params or default_params(spec)
    times, Q1, P1, mom1, tail1, _, _ = _escape_record(spec, x, cfg, checkpoints, params)
    _, Q2, P2, mom2, tail2, _, _ = _escape_record(spec, x_ref, cfg, checkpoints, params)
    _assert_equal_momenta(mom1.limit, mom2.limit, tail1, tail2, mom1.residual, mom2.residual)

    v = spec.velocities(mom2.limit)
    mismatch = _momentum_mismatch(spec, times, P1, P2)
    differences = _perpendicular(_aligned_difference(spec, times, Q1, Q2, mom2.limit, mismatch), v)
    estimate = extrapolate(times, differences, expansion_terms("offset", spec.alpha))
    b = _perpendicular(estimate.limit, v)
    logger.info(f"Orbit offset extrapolated with residual {estimate.residual:.3e}, "
                f"momentum mismatch {np.linalg.norm(mismatch):.3e}")
    return OffsetResult(b=b, residual=estimate.residual, converged=estimate.residual < tol,
                        orthogonality=_orthogonality(b, v))


def _orthogonality(b, v):
    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        return 0.0
    return abs(float(b @ v)) / (nb * float(np.linalg.norm(v)))


def pair_synchronization(spec, x1, x2, cfg, horizon=2.0 ** 17, t_first=1.0, fit_window=None, tol=1e-5, params=None):
    """
    Decay of |p(t; x2) - p(t; x1)| and the limit a+ of q(t; x2) - q(t; x1).

    The extrapolated momentum mismatch of the two orbits is subtracted from
    both sequences first; it is reported separately.

    Args:
        fit_window: optional (t_low, t_high) restricting the power-law fits

    Returns:
        SynchronizationReport; exponent is None when the momenta coincide exactly
    """
    checkpoints = dyadic_checkpoints(t_first, horizon)
    params = params or default_params(spec)
    times, Q1, P1, mom1, tail1, _, _ = _escape_record(spec, x1, cfg, checkpoints, params)
    _, Q2, P2, mom2, tail2, _, _ = _escape_record(spec, x2, cfg, checkpoints, params)
    _assert_equal_momenta(mom1.limit, mom2.limit, tail1, tail2, mom1.residual, mom2.residual)

    mismatch = _momentum_mismatch(spec, times, P2, P1)
    window = np.ones_like(times, dtype=bool)
    if fit_window is not None:
        window = (times >= fit_window[0]) & (times <= fit_window[1])
    exponent = fit_power_law(times[window], np.linalg.norm(P2 - P1 - mismatch, axis=1)[window])
    self_exponent = fit_power_law(times[window], np.linalg.norm(P1 - mom1.limit, axis=1)[window])
    differences = _aligned_difference(spec, times, Q2, Q1, mom1.limit, mismatch)
    estimate = extrapolate(times, differences, expansion_terms("offset", spec.alpha))
    return SynchronizationReport(
        exponent=exponent,
        a_plus=estimate.limit,
        a_plus_residual=estimate.residual,
        a_plus_converged=estimate.residual < tol,
        self_exponent=self_exponent,
        momentum_mismatch=float(np.linalg.norm(mismatch)),
    )


# Scattering map

def relative_momentum(spec, p):
    """(m2 p1 - m1 p2) / (m1 + m2) for a two-body system."""
    if spec.n != 2:
        raise DomainError("relative momentum is defined for two bodies")
    m1, m2 = spec.masses
    P = np.asarray(p).reshape(2, spec.d)
    return (m2 * P[0] - m1 * P[1]) / (m1 + m2)


def two_body_incoming(spec, speed, impact_parameter, lead_time=50.0):
    """
    Incoming datum (p-, Q-) of a two-body encounter in the center-of-mass frame.

    The relative velocity is speed along the first axis; at comparison time 0
    the relative position is (-lead_time * speed, impact_parameter).
    """
    if spec.n != 2 or spec.d < 2:
        raise DomainError("two_body_incoming needs two bodies in d >= 2")
    m1, m2 = spec.masses
    total = m1 + m2
    mu = m1 * m2 / total
    rel = np.zeros(spec.d)
    rel[0], rel[1] = -lead_time * speed, impact_parameter
    rel_p = np.zeros(spec.d)
    rel_p[0] = mu * speed
    return PhaseState(p=np.concatenate([rel_p, -rel_p]), q=np.concatenate([(m2 / total) * rel, -(m1 / total) * rel]))


def angle_between(a, b):
    """Angle between two vectors, accurate near 0 and pi."""
    ua = a / np.linalg.norm(a)
    ub = b / np.linalg.norm(b)
    return 2.0 * math.atan2(float(np.linalg.norm(ua - ub)), float(np.linalg.norm(ua + ub)))


def scattering_map(spec, incoming, cfg, tol=DEFAULT_TOLERANCE, horizon=2.0 ** 17, t_first=1.0, comparison=None):
    """
    Scattering map S = inverse(Omega+) o Omega-.

    The incoming datum (p-, Q-) is anchored at comparison time 0. Omega- is
    the backward time-limit transform; the outgoing datum is the forward
    inverse transform of the resulting state at time 0.

    Returns:
        ScatteringMapResult; deflection_angle is set for two bodies
    """
    if comparison is None:
        comparison = Comparison.DOLLARD if spec.alpha <= 1.0 and not spec.potential.is_zero else Comparison.FREE
    if spec.potential.is_zero:
        return ScatteringMapResult(p_plus=incoming.p.copy(), q_plus=incoming.q.copy(), state0=incoming,
                                   incoming_residual=0.0, outgoing_residual=0.0,
                                   deflection_angle=0.0 if spec.n == 2 else None)

    omega_minus = moller_time_limit(spec, incoming, -1, comparison, cfg, tol, horizon, t_first,
                                    raise_on_failure=False)
    state0 = omega_minus.image
    outgoing = _inverse_moller(spec, state0, comparison, cfg, tol, horizon, t_first, 1, raise_on_failure=False)
    if not (omega_minus.converged and outgoing.converged):
        logger.warning(f"Scattering map residuals {omega_minus.residual:.3e} / {outgoing.residual:.3e} exceed {tol:.1e}")
    deflection = None
    if spec.n == 2:
        deflection = angle_between(relative_momentum(spec, incoming.p), relative_momentum(spec, outgoing.image.p))
    return ScatteringMapResult(
        p_plus=outgoing.image.p,
        q_plus=outgoing.image.q,
        state0=state0,
        incoming_residual=omega_minus.residual,
        outgoing_residual=outgoing.residual,
        deflection_angle=deflection,
    )


# Derivative checks

def canonical_form(dim):
    """Sigma = [[0, -I], [I, 0]] in (p, q) coordinates."""
    eye = np.eye(dim)
    zero = np.zeros((dim, dim))
    return np.block([[zero, -eye], [eye, zero]])


def _as_state(result):
    if isinstance(result, TransformResult):
        if not result.converged:
            raise StencilFailureError(f"transform did not converge at a stencil point (residual {result.residual:.3e})")
        return result.image
    return result


def symplectic_residual(spec, transform, X0, h_fd=1e-5):
    """
    max |J^T Sigma J - Sigma| for the central-difference Jacobian J of a phase-space map.

    Args:
        spec: SystemSpec
        transform: callable PhaseState -> PhaseState or TransformResult
        X0: base point
        h_fd: finite-difference step

    Raises:
        StencilFailureError: a stencil evaluation failed or did not converge
    """
    z0 = X0.canonical()
    size = z0.shape[0]
    J = np.zeros((size, size))
    for k in range(size):
        step = np.zeros(size)
        step[k] = h_fd
        try:
            plus = transform(PhaseState.from_canonical(z0 + step))
            minus = transform(PhaseState.from_canonical(z0 - step))
        except NBodyScatterError as exc:
            raise StencilFailureError(f"stencil point {k} failed: {exc}") from exc
        J[:, k] = (_as_state(plus).canonical() - _as_state(minus).canonical()) / (2.0 * h_fd)
    sigma = canonical_form(spec.dim)
    return float(np.max(np.abs(J.T @ sigma @ J - sigma)))


def momentum_sensitivity(spec, x0, cfg, horizon, h_fd=1e-5, t_first=1.0, params=None):
    """
    Central-difference Jacobian blocks of p+ with respect to the initial state.

    Returns:
        (dp+/dp0 - I, dp+/dq0) as dn x dn arrays
    """
    params = params or default_params(spec)
    dim = spec.dim
    z0 = x0.canonical()
    J = np.zeros((dim, 2 * dim))
    for k in range(2 * dim):
        step = np.zeros(2 * dim)
        step[k] = h_fd
        plus = asymptotic_velocity(spec, PhaseState.from_canonical(z0 + step), cfg, horizon, params, t_first=t_first)
        minus = asymptotic_velocity(spec, PhaseState.from_canonical(z0 - step), cfg, horizon, params, t_first=t_first)
        J[:, k] = (plus.p_plus - minus.p_plus) / (2.0 * h_fd)
    return J[:, :dim] - np.eye(dim), J[:, dim:]
