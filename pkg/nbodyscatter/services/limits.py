"""Limit extraction along dyadic time checkpoints.

Every "t -> infinity" quantity in this package is sampled at t_k = t_first * 2^k
and extrapolated with a least-squares model a(T) = a_inf + sum_j c_j T^-e_j log(T)^l_j
whose exponents come from the known asymptotic expansion of the quantity.
"""
import logging
import math

import numpy as np
from scipy import stats

from ..errors import DomainError
from ..models import LimitEstimate, PowerLawFit

logger = logging.getLogger(__name__)


def dyadic_checkpoints(t_first, horizon):
    """
    Geometric checkpoints t_first * 2^k up to and including the horizon.

    Args:
        t_first: first checkpoint, > 0
        horizon: last admissible time, >= t_first

    Returns:
        numpy array of checkpoint times
    """
    if not t_first > 0:
        raise DomainError(f"dyadic_checkpoints: t_first must be positive, got {t_first}")
    if horizon < t_first:
        raise DomainError(f"dyadic_checkpoints: horizon {horizon} is below t_first {t_first}")
    count = int(math.floor(math.log2(horizon / t_first) + 1e-9)) + 1
    return t_first * 2.0 ** np.arange(count)


def expansion_terms(quantity, alpha):
    """
    Correction terms (exponent, log power) of the asymptotic expansion of a quantity.

    quantity is one of:
        "momentum"          p(t) -> p+
        "dollard_position"  q(T) - T v(T) - W(T; p(T)) -> Q
        "free_position"     q(T) - T v(T) -> Q (short range)
        "offset"            q(t) - q_ref(t) -> a+
    """
    a = float(alpha)
    if quantity == "momentum":
        if a == 1.0:
            terms = [(1.0, 0), (2.0, 1), (2.0, 0)]
        else:
            terms = [(a, 0), (min(2.0 * a, a + 1.0), 0)]
    elif quantity == "dollard_position":
        if a == 1.0:
            terms = [(1.0, 1), (1.0, 0)]
        else:
            terms = [(2.0 * a - 1.0, 0), (a, 0), (3.0 * a - 1.0, 0)]
    elif quantity == "free_position":
        terms = [(a - 1.0, 0), (2.0 * a - 2.0, 0), (a, 0), (3.0 * a - 3.0, 0)]
    elif quantity == "offset":
        if a == 1.0:
            terms = [(1.0, 1), (1.0, 0), (2.0, 1)]
        else:
            terms = [(a, 0), (min(2.0 * a, a + 1.0), 0)]
    else:
        raise DomainError(f"expansion_terms: unknown quantity {quantity!r}")
    unique = []
    for term in sorted(terms):
        if term[0] > 0 and term not in unique:
            unique.append(term)
    return unique


def _fit_limit(times, values, terms):
    columns = [np.ones_like(times)]
    for exponent, log_power in terms:
        col = times ** (-exponent) * np.log(times) ** log_power
        columns.append(col / np.max(np.abs(col)))
    A = np.column_stack(columns)
    coeffs, *_ = np.linalg.lstsq(A, values, rcond=None)
    return coeffs[0]


def extrapolate(times, values, terms):
    """
    Richardson-style limit of a sequence sampled at dyadic times.

    The model uses len(terms) correction terms fitted on the latest
    len(terms) + 1 samples; the residual is the change of the limit when the
    window is shifted back by one checkpoint. Short sequences drop the
    highest-order terms.

    Args:
        times: increasing sample times, shape (K,)
        values: samples, shape (K,) or (K, m)
        terms: list of (exponent, log power) correction terms

    Returns:
        LimitEstimate
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    K = times.shape[0]
    if K == 0:
        raise DomainError("extrapolate: empty sequence")
    flat = values.reshape(K, -1)
    if K == 1:
        return LimitEstimate(limit=values[0].copy(), residual=math.inf, cauchy_gap=math.inf, times=times)

    usable = list(terms)[: max(0, K - 2)]
    width = len(usable) + 1
    latest = _fit_limit(times[K - width:], flat[K - width:], usable)
    previous = _fit_limit(times[K - width - 1:K - 1], flat[K - width - 1:K - 1], usable)
    residual = float(np.max(np.abs(latest - previous)))
    cauchy_gap = float(np.max(np.abs(flat[-1] - flat[-2])))
    logger.debug(f"Extrapolated {flat.shape[1]} components with {len(usable)} terms: residual {residual:.3e}")
    return LimitEstimate(
        limit=latest.reshape(values.shape[1:]),
        residual=residual,
        cauchy_gap=cauchy_gap,
        times=times,
    )


def fit_power_law(times, magnitudes, log_corrected=False, confidence=0.95):
    """
    Log-log least-squares slope of magnitudes against times.

    Non-positive or non-finite magnitudes are skipped. With log_corrected the
    magnitudes are divided by log(t) first, which turns T^-1 log T into a pure
    power law.

    Returns:
        PowerLawFit, or None when fewer than three usable points remain
    """
    t = np.asarray(times, dtype=float)
    m = np.asarray(magnitudes, dtype=float)
    if log_corrected:
        m = m / np.log(t)
    keep = np.isfinite(m) & (m > 0) & (t > 0)
    if np.count_nonzero(keep) < 3:
        return None
    x = np.log(t[keep])
    y = np.log(m[keep])
    result = stats.linregress(x, y)
    dof = x.shape[0] - 2
    # Standard error from the residuals; linregress derives it from r, which saturates at |r| = 1.
    residuals = y - (result.intercept + result.slope * x)
    spread = float(np.sum((x - x.mean()) ** 2))
    if dof > 0 and spread > 0.0:
        stderr = math.sqrt(float(residuals @ residuals) / dof / spread)
        half_width = float(stats.t.ppf(0.5 + confidence / 2.0, dof) * stderr)
    else:
        half_width = math.inf
    return PowerLawFit(
        slope=float(result.slope),
        intercept=float(result.intercept),
        half_width=half_width,
        n_points=int(x.shape[0]),
    )


def fit_growth_exponent(times, values):
    """
    Growth exponent of a sequence with an unknown constant offset.

    Fits the log-log slope of the dyadic increments |D(t_k) - D(t_{k-1})|
    against t_k; for D(t) = c t^g + const + o(t^g) the slope is g.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float).reshape(t.shape[0], -1)
    increments = np.linalg.norm(np.diff(v, axis=0), axis=1)
    return fit_power_law(t[1:], increments)


def is_cauchy(values, tol):
    """True when the last two samples of a sequence differ by less than tol in sup-norm."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] < 2:
        return False
    return bool(np.max(np.abs(values[-1] - values[-2])) < tol)
