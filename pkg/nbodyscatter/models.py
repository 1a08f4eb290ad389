"""Domain types for n-body scattering computations.

Everything here is an immutable value: a system definition, a phase-space
point, or a report produced by one of the services. Numeric arrays are
stored as read-only float64 numpy arrays so that values can be shared
freely between threads and worker processes.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Union
import math

import numpy as np

from .errors import ConfigurationError


def _frozen_array(values, name, ndim=1):
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise ConfigurationError(f"{name}: expected a {ndim}-dimensional array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


# Pair Function Models
#
# Radial profiles phi(r) with analytic first and second derivatives. A pair
# potential V_ij(Q) = phi(|Q|) is even in Q, which keeps the relative
# acceleration identity X_ij = -(a_i - a_j) exact.

@dataclass(frozen=True)
class GaussianBump:
    """Nonsingular short-range bump A*exp(-r^2 / (2 w^2))."""

    amplitude: float
    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise ConfigurationError(f"width: must be positive, got {self.width}")

    def value(self, r):
        return self.amplitude * np.exp(-0.5 * (r / self.width) ** 2)

    def d1(self, r):
        return -self.amplitude * r / self.width ** 2 * np.exp(-0.5 * (r / self.width) ** 2)

    def d2(self, r):
        w2 = self.width ** 2
        return self.amplitude * (r ** 2 / w2 ** 2 - 1.0 / w2) * np.exp(-0.5 * r ** 2 / w2)


@dataclass(frozen=True)
class SoftenedPower:
    """Nonsingular long-range profile I * (r^2 + eps^2)^(-alpha/2)."""

    coupling: float
    alpha: float
    softening: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigurationError(f"alpha: must be positive, got {self.alpha}")
        if not self.softening > 0:
            raise ConfigurationError(f"softening: must be positive, got {self.softening}")

    def value(self, r):
        return self.coupling * (r ** 2 + self.softening ** 2) ** (-0.5 * self.alpha)

    def d1(self, r):
        s = r ** 2 + self.softening ** 2
        return -self.alpha * self.coupling * r * s ** (-0.5 * self.alpha - 1.0)

    def d2(self, r):
        s = r ** 2 + self.softening ** 2
        a = self.alpha
        return self.coupling * (-a * s ** (-0.5 * a - 1.0) + a * (a + 2.0) * r ** 2 * s ** (-0.5 * a - 2.0))


PairFunction = Union[GaussianBump, SoftenedPower]


# Potential Models

@dataclass(frozen=True, eq=False)
class HomogeneousPotential:
    """V_ij(Q) = I_ij / |Q|^alpha with a symmetric, zero-diagonal coupling matrix."""

    alpha: float
    coefficients: np.ndarray

    def __post_init__(self):
        coeffs = _frozen_array(self.coefficients, "coefficients", ndim=2)
        if coeffs.shape[0] != coeffs.shape[1]:
            raise ConfigurationError(f"coefficients: matrix must be square, got {coeffs.shape}")
        if not np.allclose(coeffs, coeffs.T, rtol=0.0, atol=0.0):
            raise ConfigurationError("coefficients: matrix must be symmetric")
        if np.any(np.diag(coeffs) != 0.0):
            raise ConfigurationError("coefficients: diagonal must be zero")
        if not self.alpha > 0:
            raise ConfigurationError(f"alpha: decay exponent must be positive, got {self.alpha}")
        object.__setattr__(self, "coefficients", coeffs)


@dataclass(frozen=True, eq=False)
class SmoothTabulatedPotential:
    """Pairwise radial profiles with a declared decay exponent and smoothness order.

    ``pairs`` maps an ordered pair (i, j), i < j, to its radial profile. Pairs
    that are absent do not interact.
    """

    pairs: dict
    alpha: float
    k: int = 2

    def __post_init__(self):
        for (i, j) in self.pairs:
            if not i < j:
                raise ConfigurationError(f"pairs: keys must satisfy i < j, got ({i}, {j})")
        if not self.alpha > 0:
            raise ConfigurationError(f"alpha: decay exponent must be positive, got {self.alpha}")
        if self.k < 1:
            raise ConfigurationError(f"k: smoothness order must be at least 1, got {self.k}")


@dataclass(frozen=True, eq=False)
class PotentialModel:
    kind: Union[HomogeneousPotential, SmoothTabulatedPotential]
    singular_at_collision: bool

    @property
    def alpha(self):
        return self.kind.alpha

    @property
    def is_homogeneous(self):
        return isinstance(self.kind, HomogeneousPotential)

    @property
    def is_short_range(self):
        return self.kind.alpha > 1.0

    @property
    def is_zero(self):
        if self.is_homogeneous:
            return not np.any(self.kind.coefficients)
        return len(self.kind.pairs) == 0


# System Model

@dataclass(frozen=True, eq=False)
class SystemSpec:
    """The immutable problem definition: n bodies in R^d with masses and a potential."""

    n: int
    d: int
    masses: np.ndarray
    potential: PotentialModel

    def __post_init__(self):
        if self.n < 2:
            raise ConfigurationError(f"n: need at least two bodies, got {self.n}")
        if self.d < 1:
            raise ConfigurationError(f"d: dimension must be at least 1, got {self.d}")
        masses = _frozen_array(self.masses, "masses")
        if masses.shape != (self.n,):
            raise ConfigurationError(f"masses: expected {self.n} entries, got {masses.shape[0]}")
        for idx, m in enumerate(masses):
            if not (np.isfinite(m) and m > 0):
                raise ConfigurationError(f"masses.{idx}: mass must be positive and finite, got {m}")
        kind = self.potential.kind
        if isinstance(kind, HomogeneousPotential) and kind.coefficients.shape != (self.n, self.n):
            raise ConfigurationError(
                f"potential.coefficients: expected {self.n}x{self.n} matrix, got {kind.coefficients.shape}"
            )
        if isinstance(kind, SmoothTabulatedPotential):
            for (i, j) in kind.pairs:
                if not (0 <= i < self.n and 0 <= j < self.n):
                    raise ConfigurationError(f"potential.pairs: pair ({i}, {j}) out of range for n={self.n}")
        object.__setattr__(self, "masses", masses)
        mass_vector = np.repeat(masses, self.d)
        mass_vector.setflags(write=False)
        object.__setattr__(self, "_mass_vector", mass_vector)
        i_idx, j_idx = np.triu_indices(self.n, k=1)
        object.__setattr__(self, "_pairs", (i_idx, j_idx))

    @property
    def dim(self):
        return self.n * self.d

    @property
    def mass_vector(self):
        """Diagonal of the mass matrix, one entry per coordinate."""
        return self._mass_vector

    @property
    def m_min(self):
        return float(self.masses.min())

    @property
    def m_max(self):
        return float(self.masses.max())

    @property
    def pair_indices(self):
        return self._pairs

    @property
    def alpha(self):
        return self.potential.alpha

    def velocities(self, p):
        return np.asarray(p, dtype=float) / self._mass_vector

    def momenta(self, v):
        return np.asarray(v, dtype=float) * self._mass_vector

    def __repr__(self):
        return f"<SystemSpec n={self.n} d={self.d} alpha={self.alpha}>"


# Phase State Model

@dataclass(frozen=True, eq=False)
class PhaseState:
    """A point x = (p, q) of phase space. Velocities are derived, never stored."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = _frozen_array(self.p, "p")
        q = _frozen_array(self.q, "q")
        if p.shape != q.shape:
            raise ConfigurationError(f"state: p and q must have equal length, got {p.shape} and {q.shape}")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ConfigurationError("state: all entries must be finite")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @classmethod
    def from_vector(cls, y):
        """Build a state from the integrator layout [q, p]."""
        y = np.asarray(y, dtype=float)
        half = y.shape[0] // 2
        return cls(p=y[half:], q=y[:half])

    def as_vector(self):
        return np.concatenate([self.q, self.p])

    def canonical(self):
        """Coordinates in the (p, q) order used for the symplectic form."""
        return np.concatenate([self.p, self.q])

    @classmethod
    def from_canonical(cls, z):
        z = np.asarray(z, dtype=float)
        half = z.shape[0] // 2
        return cls(p=z[:half], q=z[half:])

    def positions(self, spec):
        return self.q.reshape(spec.n, spec.d)

    def velocities(self, spec):
        return spec.velocities(self.p)

    def check_dimension(self, spec):
        if self.q.shape[0] != spec.dim:
            raise ConfigurationError(f"state: expected {spec.dim} coordinates, got {self.q.shape[0]}")

    def distance(self, other):
        """Sup-norm distance between two states."""
        return float(max(np.max(np.abs(self.p - other.p)), np.max(np.abs(self.q - other.q))))

    def __repr__(self):
        return f"<PhaseState dim={self.q.shape[0]}>"


@dataclass(frozen=True, eq=False)
class PairStats:
    q_ij: np.ndarray
    v_ij: np.ndarray
    dots: np.ndarray
    q_min: float
    q_max: float
    v_min: float
    v_max: float


@dataclass(frozen=True)
class SeminormEstimate:
    alpha: float
    k: int
    value: float
    method: str
    sample_bound_gap: float = 0.0


# Integration Models

@dataclass(frozen=True)
class IntegratorConfig:
    """Integrator settings.

    ``method`` is ``"DOP853"`` (adaptive 8(5,3) Runge-Kutta) or ``"yoshida6"``
    (fixed-step symplectic composition with step ``step``). A
    ``collision_radius`` of None means 1e-6 times the initial q_min.
    """

    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = math.inf
    collision_radius: Optional[float] = None
    method: str = "DOP853"
    step: float = 0.01

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ConfigurationError("integrator: tolerances must be positive")
        if not self.max_step > 0:
            raise ConfigurationError(f"integrator.max_step: must be positive, got {self.max_step}")
        if self.collision_radius is not None and not self.collision_radius > 0:
            raise ConfigurationError(f"integrator.collision_radius: must be positive, got {self.collision_radius}")
        if self.method not in ("DOP853", "yoshida6"):
            raise ConfigurationError(f"integrator.method: unknown method {self.method!r}")
        if not self.step > 0:
            raise ConfigurationError(f"integrator.step: must be positive, got {self.step}")


class TerminationKind(Enum):
    COMPLETED = "Completed"
    COLLISION = "CollisionAt"
    STEP_FAILURE = "StepFailure"


@dataclass(frozen=True)
class Termination:
    kind: TerminationKind
    time: Optional[float] = None

    @property
    def completed(self):
        return self.kind is TerminationKind.COMPLETED


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-sampled flow output.

    ``times`` is strictly monotone in the direction of integration and starts
    at the requested initial time; ``q`` and ``p`` hold one row per sample.
    """

    times: np.ndarray
    q: np.ndarray
    p: np.ndarray
    energy: np.ndarray
    energy_drift: float
    termination: Termination
    dense_eval: Callable = field(repr=False)

    @property
    def terminated(self):
        return self.termination

    @property
    def direction(self):
        if len(self.times) < 2:
            return 1
        return 1 if self.times[-1] > self.times[0] else -1

    @property
    def states(self):
        return [PhaseState(p=p, q=q) for p, q in zip(self.p, self.q)]

    @property
    def final_state(self):
        return PhaseState(p=self.p[-1], q=self.q[-1])

    def at(self, t):
        """Interpolated state at time t inside the integrated range."""
        return PhaseState.from_vector(self.dense_eval(t))


# Free Region Models

@dataclass(frozen=True)
class FreeRegionParams:
    alpha: float
    delta: float
    C: float
    margin_floor: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigurationError(f"alpha: must be positive, got {self.alpha}")
        if not 0 < self.delta <= self.delta0 + 1e-15:
            raise ConfigurationError(f"delta: must lie in (0, {self.delta0}], got {self.delta}")
        if not (self.C >= 0 and math.isfinite(self.C)):
            raise ConfigurationError(f"C: must be finite and non-negative, got {self.C}")
        if self.margin_floor < 0:
            raise ConfigurationError(f"margin_floor: must be non-negative, got {self.margin_floor}")

    @property
    def delta0(self):
        return min(self.alpha / (4.0 + self.alpha), 0.2)


@dataclass(frozen=True)
class MembershipReport:
    inside: bool
    margin1: float
    margin2: float
    margin3: float

    @property
    def margins(self):
        return (self.margin1, self.margin2, self.margin3)


@dataclass(frozen=True)
class PropagationViolation:
    pair: tuple
    time: float
    side: str
    slack: float


@dataclass(frozen=True)
class PropagationReport:
    holds: bool
    worst_lower_slack: float
    worst_upper_slack: float
    violations: tuple = ()


# Scattering Models

class TransformMethod(Enum):
    FIXED_POINT = "FixedPoint"
    TIME_LIMIT = "TimeLimit"


class Comparison(Enum):
    FREE = "Free"
    DOLLARD = "Dollard"


@dataclass(frozen=True, eq=False)
class LimitEstimate:
    """Extrapolated limit of a dyadic sequence plus its diagnostics."""

    limit: np.ndarray
    residual: float
    cauchy_gap: float
    times: np.ndarray


@dataclass(frozen=True)
class PowerLawFit:
    slope: float
    intercept: float
    half_width: float
    n_points: int


@dataclass(frozen=True, eq=False)
class ScatteringDatum:
    p_plus: np.ndarray
    tail_bound: float
    offset: Optional[np.ndarray]
    converged: bool
    rate_estimate: Optional[float]
    residual: float = math.inf
    entry_time: Optional[float] = None
    horizon: float = 0.0
    checkpoints: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)


@dataclass(frozen=True, eq=False)
class TransformResult:
    image: PhaseState
    method: TransformMethod
    iterations_or_T: float
    residual: float
    converged: bool
    rate_estimate: Optional[float] = None
    comparison: Optional[Comparison] = None
    tail_bound: Optional[float] = None
    contraction_ratio: Optional[float] = None


@dataclass(frozen=True, eq=False)
class OffsetResult:
    b: np.ndarray
    residual: float
    converged: bool
    orthogonality: float


@dataclass(frozen=True, eq=False)
class SynchronizationReport:
    exponent: Optional[PowerLawFit]
    a_plus: np.ndarray
    a_plus_residual: float
    a_plus_converged: bool
    self_exponent: Optional[PowerLawFit]
    momentum_mismatch: float = 0.0


@dataclass(frozen=True, eq=False)
class ScatteringMapResult:
    p_plus: np.ndarray
    q_plus: np.ndarray
    state0: PhaseState
    incoming_residual: float
    outgoing_residual: float
    deflection_angle: Optional[float] = None


# Oracle Models

@dataclass(frozen=True, eq=False)
class KeplerHyperbola:
    """Analytic datum of a two-body Kepler hyperbola in the center-of-mass frame."""

    masses: tuple
    reduced_mass: float
    coupling: float
    energy: float
    angular_momentum: float
    eccentricity: float
    semi_major_axis: float
    mean_motion: float
    asymptotic_speed: float
    impact_parameter: float
    incoming_direction: np.ndarray
    outgoing_direction: np.ndarray
    periapsis_angle: float = 0.0

    @property
    def attractive(self):
        return self.coupling < 0

    @property
    def deflection_angle(self):
        return 2.0 * math.asin(1.0 / self.eccentricity)


@dataclass(frozen=True, eq=False)
class AsymptoteFit:
    direction: np.ndarray
    offset: np.ndarray
    residual_trend: tuple
    converges: bool
    log_coefficient: float = 0.0
    log_sign: int = 0
    window: int = 0


@dataclass(frozen=True)
class CentralConfigurationReport:
    is_central: bool
    angle: float
    degenerate: bool = False


# Acceptance Models

@dataclass(frozen=True)
class AcceptanceOutcome:
    """Result of one acceptance check: measured values next to their thresholds."""

    name: str
    passed: bool
    measurements: dict
    thresholds: dict
    detail: str = ""
