"""Problem definition services: potentials, seminorms, pair statistics, energies."""
from functools import lru_cache
from itertools import combinations_with_replacement
import logging
import math

import numpy as np
import sympy as sp
from scipy.stats import norm, qmc
from scipy.integrate import quad

from ..errors import CollisionError, DomainError, InfiniteSeminormError
from ..models import (
    HomogeneousPotential,
    PairStats,
    PotentialModel,
    SeminormEstimate,
    SmoothTabulatedPotential,
    SystemSpec,
)

logger = logging.getLogger(__name__)

SEMINORM_RADII = np.logspace(-2.0, 4.0, 64)
SEMINORM_DIRECTIONS = 128
SEMINORM_SLACK = 0.05
HOMOGENEOUS_SPHERE_SAMPLES = 4096


# System builders

def homogeneous_system(masses, d, alpha, coupling, singular=True):
    """
    Build a system with (-alpha)-homogeneous pair potentials I_ij / |Q|^alpha.

    Args:
        masses: sequence of n positive masses
        d: space dimension
        alpha: decay exponent
        coupling: scalar (same I for every pair) or full n x n symmetric matrix
        singular: whether the potential blows up on the collision set

    Returns:
        SystemSpec
    """
    masses = np.asarray(masses, dtype=float)
    n = masses.shape[0]
    coupling = np.asarray(coupling, dtype=float)
    if coupling.ndim == 0:
        coefficients = np.full((n, n), float(coupling))
        np.fill_diagonal(coefficients, 0.0)
    else:
        coefficients = coupling
    potential = PotentialModel(
        kind=HomogeneousPotential(alpha=float(alpha), coefficients=coefficients),
        singular_at_collision=bool(singular),
    )
    return SystemSpec(n=n, d=int(d), masses=masses, potential=potential)


def newtonian_system(masses, d=3, G=1.0):
    """Gravitational n-body system, I_ij = -G m_i m_j."""
    masses = np.asarray(masses, dtype=float)
    coefficients = -G * np.outer(masses, masses)
    np.fill_diagonal(coefficients, 0.0)
    return homogeneous_system(masses, d, 1.0, coefficients, singular=True)


def zero_potential_system(n, d, masses=None):
    masses = np.ones(n) if masses is None else np.asarray(masses, dtype=float)
    return homogeneous_system(masses, d, 1.0, 0.0, singular=False)


def smooth_system(masses, d, profile, alpha, k=2, pairs=None):
    """
    Build a system whose pairs interact through a radial profile.

    Args:
        masses: sequence of n positive masses
        d: space dimension
        profile: radial pair function (GaussianBump, SoftenedPower)
        alpha: declared decay exponent
        k: declared smoothness order
        pairs: optional iterable of (i, j) with i < j; all pairs by default

    Returns:
        SystemSpec with a nonsingular SmoothTabulated potential
    """
    masses = np.asarray(masses, dtype=float)
    n = masses.shape[0]
    if pairs is None:
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    kind = SmoothTabulatedPotential(pairs={tuple(pair): profile for pair in pairs}, alpha=float(alpha), k=int(k))
    return SystemSpec(n=n, d=int(d), masses=masses, potential=PotentialModel(kind=kind, singular_at_collision=False))


# Pair geometry

def _pair_differences(spec, q):
    """Differences q_i - q_j for i < j; q may carry leading batch axes."""
    Q = np.asarray(q, dtype=float).reshape(q.shape[:-1] + (spec.n, spec.d))
    i_idx, j_idx = spec.pair_indices
    diff = Q[..., i_idx, :] - Q[..., j_idx, :]
    return diff, np.linalg.norm(diff, axis=-1)


@lru_cache(maxsize=64)
def _incidence(n):
    i_idx, j_idx = np.triu_indices(n, k=1)
    B = np.zeros((n, i_idx.shape[0]))
    B[i_idx, np.arange(i_idx.shape[0])] = 1.0
    B[j_idx, np.arange(i_idx.shape[0])] = -1.0
    B.setflags(write=False)
    return B


def _pair_slot(spec, i, j):
    i_idx, j_idx = spec.pair_indices
    return int(np.flatnonzero((i_idx == i) & (j_idx == j))[0])


def _pair_coefficients(spec):
    i_idx, j_idx = spec.pair_indices
    return spec.potential.kind.coefficients[i_idx, j_idx]


def _pair_values(spec, diff, r):
    kind = spec.potential.kind
    if isinstance(kind, HomogeneousPotential):
        coeffs = _pair_coefficients(spec)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(coeffs != 0.0, coeffs * r ** (-kind.alpha), 0.0)
    values = np.zeros(r.shape)
    for (i, j), profile in kind.pairs.items():
        slot = _pair_slot(spec, i, j)
        values[..., slot] = profile.value(r[..., slot])
    return values


def _radial_ratio(profile, r):
    """phi'(r) / r with the r -> 0 limit phi''(0) for smooth profiles."""
    safe = np.where(r > 0, r, 1.0)
    return np.where(r > 0, profile.d1(safe) / safe, profile.d2(np.zeros_like(r)))


def _pair_gradients(spec, diff, r):
    """Gradients of V_ij at the pair differences, shape (..., P, d)."""
    kind = spec.potential.kind
    if isinstance(kind, HomogeneousPotential):
        coeffs = _pair_coefficients(spec)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(coeffs != 0.0, -kind.alpha * coeffs * r ** (-kind.alpha - 2.0), 0.0)
        return scale[..., None] * diff
    grads = np.zeros(diff.shape)
    for (i, j), profile in kind.pairs.items():
        slot = _pair_slot(spec, i, j)
        grads[..., slot, :] = _radial_ratio(profile, r[..., slot])[..., None] * diff[..., slot, :]
    return grads


def _pair_hessian_apply(spec, diff, r, u):
    """Hessian of V_ij at the pair differences applied to per-pair vectors u."""
    kind = spec.potential.kind
    proj = np.sum(diff * u, axis=-1)
    if isinstance(kind, HomogeneousPotential):
        coeffs = _pair_coefficients(spec)
        a = kind.alpha
        with np.errstate(divide="ignore", invalid="ignore"):
            iso = np.where(coeffs != 0.0, -a * coeffs * r ** (-a - 2.0), 0.0)
            rad = np.where(coeffs != 0.0, a * (a + 2.0) * coeffs * r ** (-a - 4.0), 0.0)
        return iso[..., None] * u + (rad * proj)[..., None] * diff
    out = np.zeros(diff.shape)
    for (i, j), profile in kind.pairs.items():
        slot = _pair_slot(spec, i, j)
        rs = r[..., slot]
        ratio = _radial_ratio(profile, rs)
        safe = np.where(rs > 0, rs, 1.0)
        radial = np.where(rs > 0, (profile.d2(safe) - ratio) / safe ** 2, 0.0)
        out[..., slot, :] = ratio[..., None] * u[..., slot, :] + (radial * proj[..., slot])[..., None] * diff[..., slot, :]
    return out


def _assemble(spec, pair_vectors):
    """Scatter per-pair vectors onto bodies: +g on i, -g on j."""
    bodies = np.einsum("np,...pd->...nd", _incidence(spec.n), pair_vectors)
    return bodies.reshape(pair_vectors.shape[:-2] + (spec.dim,))


def pair_distances(spec, qs):
    """Pair distances |q_i - q_j|, i < j, for one configuration or a stack of them."""
    return _pair_differences(spec, np.asarray(qs, dtype=float))[1]


def check_collision(spec, q):
    """Raise CollisionError if q lies on the collision set of a singular potential."""
    if not spec.potential.singular_at_collision:
        return
    _, r = _pair_differences(spec, np.asarray(q, dtype=float))
    if np.any(r <= 0.0):
        raise CollisionError("configuration lies on the collision set")


# Energies and forces

def potential_energy(spec, q):
    q = np.asarray(q, dtype=float)
    check_collision(spec, q)
    diff, r = _pair_differences(spec, q)
    return float(np.sum(_pair_values(spec, diff, r)))


def potential_gradient(spec, q):
    q = np.asarray(q, dtype=float)
    check_collision(spec, q)
    return gradient_batch(spec, q)


def gradient_batch(spec, qs):
    """Gradient of V for one configuration or a stack of them; no collision check."""
    diff, r = _pair_differences(spec, np.asarray(qs, dtype=float))
    return _assemble(spec, _pair_gradients(spec, diff, r))


def potential_hessian_apply(spec, q, w):
    q = np.asarray(q, dtype=float)
    check_collision(spec, q)
    diff, r = _pair_differences(spec, q)
    W = np.asarray(w, dtype=float).reshape(spec.n, spec.d)
    i_idx, j_idx = spec.pair_indices
    return _assemble(spec, _pair_hessian_apply(spec, diff, r, W[i_idx] - W[j_idx]))


def kinetic_energy(spec, p):
    p = np.asarray(p, dtype=float)
    return float(0.5 * np.sum(p * p / spec.mass_vector))


def hamiltonian(spec, state):
    return kinetic_energy(spec, state.p) + potential_energy(spec, state.q)


def hamiltonian_batch(spec, qs, ps):
    """Energies of a stack of samples, one row per (q, p) pair; no collision check."""
    qs = np.asarray(qs, dtype=float)
    ps = np.asarray(ps, dtype=float)
    diff, r = _pair_differences(spec, qs)
    kinetic = 0.5 * np.sum(ps * ps / spec.mass_vector, axis=-1)
    return kinetic + np.sum(_pair_values(spec, diff, r), axis=-1)


def relative_acceleration(spec, q, i, j):
    """
    Relative acceleration X_ij(q) = sum_k grad V_ik / m_i - sum_k grad V_jk / m_j.

    This equals -(a_i - a_j) for the Newtonian accelerations a = -M^{-1} grad V.

    Args:
        spec: SystemSpec
        q: configuration in R^{dn}
        i, j: distinct body indices

    Returns:
        vector in R^d
    """
    if i == j:
        raise DomainError("relative_acceleration: i and j must differ")
    G = potential_gradient(spec, q).reshape(spec.n, spec.d)
    return G[i] / spec.masses[i] - G[j] / spec.masses[j]


def smooth_abs(t):
    """<t> = sqrt(t^2 + 1)."""
    return np.hypot(t, 1.0)


def smooth_abs_tail(alpha, q):
    """
    Tail integral of <s>^(-alpha-1) over [q, inf) with its two-sided bound.

    For alpha > 0 and q >= 0 the integral lies between <q>^-alpha / alpha and
    (1/alpha + 1) <q>^-alpha.

    Returns:
        (lower, integral, upper)
    """
    if not alpha > 0:
        raise DomainError(f"smooth_abs_tail: alpha must be positive, got {alpha}")
    if q < 0:
        raise DomainError(f"smooth_abs_tail: q must be non-negative, got {q}")
    integral, _ = quad(lambda s: smooth_abs(s) ** (-alpha - 1.0), q, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
    base = smooth_abs(q) ** (-alpha)
    return base / alpha, integral, (1.0 / alpha + 1.0) * base


# Pair statistics

def pair_stats(spec, state):
    """
    Pair distances, pair speed differences and their extrema.

    Args:
        spec: SystemSpec
        state: PhaseState

    Returns:
        PairStats
    """
    Q = state.positions(spec)
    V = state.velocities(spec).reshape(spec.n, spec.d)
    dq = Q[:, None, :] - Q[None, :, :]
    dv = V[:, None, :] - V[None, :, :]
    q_ij = np.linalg.norm(dq, axis=-1)
    v_ij = np.linalg.norm(dv, axis=-1)
    dots = np.sum(dq * dv, axis=-1)
    i_idx, j_idx = spec.pair_indices
    q_pairs = q_ij[i_idx, j_idx]
    v_pairs = v_ij[i_idx, j_idx]
    q_min = float(q_pairs.min())
    if q_min <= 0.0 and spec.potential.singular_at_collision:
        raise CollisionError("pair_stats: two bodies coincide under a singular potential")
    return PairStats(
        q_ij=q_ij,
        v_ij=v_ij,
        dots=dots,
        q_min=q_min,
        q_max=float(q_pairs.max()),
        v_min=float(v_pairs.min()),
        v_max=float(v_pairs.max()),
    )


# Seminorms

@lru_cache(maxsize=16)
def unit_directions(d, count=SEMINORM_DIRECTIONS):
    """Deterministic quasi-uniform unit vectors in R^d, shape (count, d)."""
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif d == 2:
        theta = 2.0 * np.pi * np.arange(count) / count
        dirs = np.column_stack([np.cos(theta), np.sin(theta)])
    else:
        points = qmc.Halton(d=d, scramble=True, seed=0).random(count)
        gauss = norm.ppf(np.clip(points, 1e-12, 1 - 1e-12))
        dirs = gauss / np.linalg.norm(gauss, axis=1, keepdims=True)
        dirs = np.vstack([dirs, np.eye(d), -np.eye(d)])
    dirs.setflags(write=False)
    return dirs


def _multi_indices(d, k):
    return list(combinations_with_replacement(range(d), k))


def _homogeneous_pair_constant(alpha, d, k):
    """Sum over |gamma| = k of sup_{|u|=1} |d^gamma |u|^-alpha|; k = 1 uses the gradient norm."""
    if k == 1:
        return alpha
    if k == 2:
        return alpha * (d * (alpha + 1.0) + 0.5 * d * (d - 1) * (alpha + 2.0))
    derivatives = _homogeneous_derivatives(float(alpha), d, k)
    dirs = unit_directions(d, HOMOGENEOUS_SPHERE_SAMPLES) if d > 1 else unit_directions(1)
    total = 0.0
    for fn in derivatives:
        values = np.abs(np.broadcast_to(fn(*dirs.T), (dirs.shape[0],)))
        total += float(values.max())
    return total


@lru_cache(maxsize=32)
def _homogeneous_derivatives(alpha, d, k):
    xs = sp.symbols(f"x0:{d}", real=True)
    base = sp.sqrt(sum(x ** 2 for x in xs)) ** (-sp.Float(alpha))
    fns = []
    for gamma in _multi_indices(d, k):
        expr = base
        for axis in gamma:
            expr = sp.diff(expr, xs[axis])
        fns.append(sp.lambdify(xs, expr, "numpy"))
    logger.debug(f"Built {len(fns)} symbolic derivatives of |x|^-{alpha} of order {k} in R^{d}")
    return tuple(fns)


def _profile_supremands(profile, alpha, k, d):
    """Per-radius supremand sup_u r^{alpha+k} |d^gamma V| for each multi-index, shape (G, R)."""
    r = SEMINORM_RADII
    if k == 1:
        return (r ** (alpha + 1.0) * np.abs(profile.d1(r)))[None, :]
    if k != 2:
        raise DomainError(f"seminorm: tabulated potentials supply derivatives up to order 2, requested k={k}")
    dirs = unit_directions(d)
    ratio = _radial_ratio(profile, r)
    radial = (profile.d2(r) - ratio)
    rows = []
    for a, b in _multi_indices(d, 2):
        entry = radial[None, :] * (dirs[:, a] * dirs[:, b])[:, None]
        if a == b:
            entry = entry + ratio[None, :]
        rows.append(r ** (alpha + 2.0) * np.abs(entry).max(axis=0))
    return np.array(rows)


def _check_bounded(curve, label):
    peak = int(np.argmax(curve))
    top = curve[-1]
    if peak >= len(curve) - 4 and top > (1.0 + SEMINORM_SLACK) * curve[-5] and top > 0:
        raise InfiniteSeminormError(f"seminorm: supremand of {label} still growing at the outer sampling radius")
    bottom = curve[0]
    if peak <= 3 and bottom > (1.0 + SEMINORM_SLACK) * curve[4] and bottom > 0:
        raise InfiniteSeminormError(f"seminorm: supremand of {label} still growing at the inner sampling radius")


def seminorm(spec, alpha, k):
    """
    Weighted-sup seminorm of the potential.

    For k = 1 this is |M^-1| sum_{i<j} sup |Q|^{alpha+1} |grad V_ij(Q)|; for
    k >= 2 the sum runs over all multi-indices of length k. Homogeneous
    potentials are evaluated in closed form (k <= 2) or by dense sampling of
    the unit sphere; tabulated ones by log-spaced radial sampling.

    Args:
        spec: SystemSpec
        alpha: decay exponent of the seminorm
        k: derivative order, k >= 1

    Returns:
        SeminormEstimate
    """
    if k < 1:
        raise DomainError(f"seminorm: derivative order must be at least 1, got {k}")
    inv_mass = 1.0 / spec.m_min
    kind = spec.potential.kind
    if spec.potential.is_zero:
        return SeminormEstimate(alpha=alpha, k=k, value=0.0, method="analytic")

    if isinstance(kind, HomogeneousPotential):
        if not math.isclose(alpha, kind.alpha, rel_tol=1e-12, abs_tol=1e-12):
            raise InfiniteSeminormError(
                f"seminorm: homogeneous potential of degree -{kind.alpha} has infinite ({alpha},{k}) seminorm"
            )
        coupling_sum = float(np.sum(np.abs(_pair_coefficients(spec))))
        value = inv_mass * coupling_sum * _homogeneous_pair_constant(kind.alpha, spec.d, k)
        method = "analytic" if k <= 2 else "sampled"
        gap = 0.0 if k <= 2 else SEMINORM_SLACK
        return SeminormEstimate(alpha=alpha, k=k, value=value, method=method, sample_bound_gap=gap)

    total = 0.0
    for (i, j), profile in kind.pairs.items():
        for row in _profile_supremands(profile, alpha, k, spec.d):
            _check_bounded(row, f"pair ({i}, {j})")
            total += float(row.max())
    logger.debug(f"Sampled ({alpha},{k}) seminorm over {len(kind.pairs)} pairs: {inv_mass * total}")
    return SeminormEstimate(alpha=alpha, k=k, value=inv_mass * total, method="sampled", sample_bound_gap=SEMINORM_SLACK)


def alpha_norm(spec, alpha):
    """Gradient seminorm |M^-1| max_{i<j} sup |Q|^{alpha+1} |grad V_ij(Q)|."""
    kind = spec.potential.kind
    if spec.potential.is_zero:
        return 0.0
    if isinstance(kind, HomogeneousPotential):
        if not math.isclose(alpha, kind.alpha, rel_tol=1e-12, abs_tol=1e-12):
            raise InfiniteSeminormError(f"alpha_norm: infinite for alpha={alpha} and degree -{kind.alpha}")
        return float(kind.alpha * np.max(np.abs(_pair_coefficients(spec))) / spec.m_min)
    best = 0.0
    for (i, j), profile in kind.pairs.items():
        row = _profile_supremands(profile, alpha, 1, spec.d)[0]
        _check_bounded(row, f"pair ({i}, {j})")
        best = max(best, float(row.max()))
    return best / spec.m_min
