"""The finally free region F+_loc and the checks built on it."""
import logging
import math

import numpy as np

from ..errors import IntegrationError, NonConvergenceError
from ..models import (
    FreeRegionParams,
    MembershipReport,
    PhaseState,
    PropagationReport,
    PropagationViolation,
    TerminationKind,
)
from .flows import nbody_flow
from .nbody_core import pair_distances, pair_stats, seminorm

logger = logging.getLogger(__name__)

ENTRY_GRID_POINTS = 2048
ENTRY_RESOLUTION = 1e-6
PROPAGATION_TOLERANCE = 1e-6


def delta0(alpha):
    return min(alpha / (4.0 + alpha), 0.2)


def default_params(spec, alpha=None, short_range_cap=False, margin_floor=0.0):
    """
    Parameters used by the invariance proof: delta = delta0, C = 16 d n |V|^(alpha,2) / delta.

    Args:
        spec: SystemSpec
        alpha: decay exponent; defaults to the potential's own
        short_range_cap: cap delta at alpha - 1 (short-range Moller transforms)
        margin_floor: optional robustness floor on the three margins

    Returns:
        FreeRegionParams
    """
    alpha = spec.alpha if alpha is None else float(alpha)
    delta = delta0(alpha)
    if short_range_cap and alpha > 1.0:
        delta = min(delta, alpha - 1.0)
    norm2 = seminorm(spec, alpha, 2).value
    C = 16.0 * spec.d * spec.n * norm2 / delta
    logger.debug(f"Free-region parameters: alpha={alpha}, delta={delta:.4f}, C={C:.6g}")
    return FreeRegionParams(alpha=alpha, delta=delta, C=C, margin_floor=margin_floor)


def is_proof_admissible(spec, params):
    """True when delta <= delta0 and C reaches the constant of the invariance proof."""
    required = 16.0 * spec.d * spec.n * seminorm(spec, params.alpha, 2).value / params.delta
    return params.delta <= params.delta0 + 1e-15 and params.C >= required * (1.0 - 1e-12)


def membership(spec, params, state):
    """
    Evaluate the three strict inequalities defining F+_loc.

    margin1 = v_min^2 - C q_max / q_min^(alpha+1)
    margin2 = min_pairs <v_i - v_j, q_i - q_j> - (1 - delta) v_ij q_ij
    margin3 = (1 + 2 delta) min_pairs q/v - max_pairs q/v

    A pair with v_ij = 0 makes margin3 = -inf.
    """
    stats = pair_stats(spec, state)
    i_idx, j_idx = spec.pair_indices
    q = stats.q_ij[i_idx, j_idx]
    v = stats.v_ij[i_idx, j_idx]
    dots = stats.dots[i_idx, j_idx]
    alpha, delta = params.alpha, params.delta

    if stats.q_min > 0.0:
        margin1 = stats.v_min ** 2 - params.C * stats.q_max / stats.q_min ** (alpha + 1.0)
    else:
        margin1 = -math.inf
    margin2 = float(np.min(dots - (1.0 - delta) * v * q))
    if stats.v_min > 0.0:
        ratios = q / v
        margin3 = float((1.0 + 2.0 * delta) * ratios.min() - ratios.max())
    else:
        margin3 = -math.inf

    floor = params.margin_floor
    inside = margin1 > floor and margin2 > floor and margin3 > floor
    return MembershipReport(inside=bool(inside), margin1=float(margin1), margin2=margin2, margin3=margin3)


def entry_time(spec, params, x0, cfg, t_max, grid_points=ENTRY_GRID_POINTS):
    """
    First time in [0, t_max] at which the forward orbit lies in F+_loc.

    The trajectory is scanned on its own samples plus a uniform grid; the
    earliest crossing is then refined by bisection to 1e-6 t_max.

    Returns:
        entry time, or None if the orbit does not enter by t_max
    """
    if membership(spec, params, x0).inside:
        return 0.0
    traj = nbody_flow(spec, x0, (0.0, t_max), cfg)
    if traj.termination.kind is TerminationKind.STEP_FAILURE:
        raise IntegrationError("entry_time: integration failed", traj.termination.time)
    end = float(traj.times[-1])
    if traj.termination.kind is TerminationKind.COLLISION:
        logger.warning(f"entry_time: orbit reached the collision radius at t={end}; scanning [0, {end}] only")

    grid = np.unique(np.concatenate([traj.times, np.linspace(0.0, end, grid_points)]))

    def inside(t):
        return membership(spec, params, traj.at(t)).inside

    previous = grid[0]
    for t in grid[1:]:
        if inside(t):
            lo, hi = previous, t
            while hi - lo > ENTRY_RESOLUTION * t_max:
                mid = 0.5 * (lo + hi)
                if inside(mid):
                    hi = mid
                else:
                    lo = mid
            logger.debug(f"Orbit enters the finally free region at t={hi:.6g}")
            return float(hi)
        previous = t
    logger.info(f"No entry into the finally free region by t={end}")
    return None


def propagation_check(spec, traj, x0_stats, tolerance=PROPAGATION_TOLERANCE):
    """
    Check the sandwich v_ij(0) t / 2 <= q_ij(t) - q_ij(0) <= 3 v_ij(0) t / 2.

    Violations are reported, never raised.

    Args:
        spec: SystemSpec
        traj: Trajectory started at the state described by x0_stats
        x0_stats: PairStats of the initial state
        tolerance: slack below which a bound counts as violated

    Returns:
        PropagationReport
    """
    i_idx, j_idx = spec.pair_indices
    q0 = x0_stats.q_ij[i_idx, j_idx]
    v0 = x0_stats.v_ij[i_idx, j_idx]
    elapsed = np.abs(traj.times - traj.times[0])[:, None]
    growth = pair_distances(spec, traj.q) - q0[None, :]
    lower = growth - 0.5 * v0[None, :] * elapsed
    upper = 1.5 * v0[None, :] * elapsed - growth

    violations = []
    for side, slack in (("lower", lower), ("upper", upper)):
        for k, slot in zip(*np.nonzero(slack < -tolerance)):
            violations.append(PropagationViolation(
                pair=(int(i_idx[slot]), int(j_idx[slot])),
                time=float(traj.times[k]),
                side=side,
                slack=float(slack[k, slot]),
            ))
    if violations:
        logger.debug(f"Propagation sandwich violated at {len(violations)} sample(s)")
    return PropagationReport(
        holds=not violations,
        worst_lower_slack=float(lower.min()),
        worst_upper_slack=float(upper.min()),
        violations=tuple(violations),
    )


def reverse_momenta(state):
    """Time reversal R(p, q) = (-p, q)."""
    return PhaseState(p=-state.p, q=state.q)


def sample_in_region(spec, params, rng, velocity_shell=(0.5, 1.5), perturbation=1e-3, max_tries=1000, t_floor=1.0):
    """
    Draw a random state inside F+_loc.

    Velocities are drawn with uniform directions and speeds in velocity_shell
    and kept only if v_min >= v_max / 4. Positions are t* v plus a
    perturbation of size at most perturbation * delta * t* * v_min, where
    t*^alpha = 2 C v_max / v_min^(alpha+3) makes the first inequality hold
    with a factor-two margin. Membership is re-checked before returning.

    Args:
        spec: SystemSpec
        params: FreeRegionParams
        rng: numpy Generator
        velocity_shell: (low, high) body speeds
        perturbation: relative size of the position perturbation
        max_tries: attempts before giving up
        t_floor: lower bound on t*

    Returns:
        PhaseState
    """
    low, high = velocity_shell
    alpha = params.alpha
    for attempt in range(max_tries):
        directions = rng.standard_normal((spec.n, spec.d))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        V = directions * rng.uniform(low, high, spec.n)[:, None]
        speeds = pair_distances(spec, V.ravel())
        v_min, v_max = float(speeds.min()), float(speeds.max())
        if v_min < 0.25 * v_max or v_min == 0.0:
            continue
        t_star = max(t_floor, (2.0 * params.C * v_max / v_min ** (alpha + 3.0)) ** (1.0 / alpha))
        shift = rng.uniform(-1.0, 1.0, (spec.n, spec.d)) / math.sqrt(spec.d)
        Q = t_star * V + perturbation * params.delta * t_star * v_min * shift
        state = PhaseState(p=spec.momenta(V.ravel()), q=Q.ravel())
        if membership(spec, params, state).inside:
            logger.debug(f"Sampled in-region state after {attempt + 1} attempt(s), t*={t_star:.4g}")
            return state
    raise NonConvergenceError(f"sample_in_region: no state inside F+_loc after {max_tries} attempts")
