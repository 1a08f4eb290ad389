"""
Experiment configuration.

An experiment is one TOML file validated into ExperimentConfig. CLI flags
override the file; NBODYSCATTER_OUTPUT_DIR overrides only the output
directory.
"""
import hashlib
import json
import logging
import os
import sys
from typing import Literal, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # Python 3.10: API-identical backport
    import tomli as tomllib

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, PositiveFloat, PositiveInt, ValidationError, model_validator

from .errors import ConfigurationError
from .models import GaussianBump, IntegratorConfig, PhaseState, SoftenedPower
from .services.nbody_core import homogeneous_system, newtonian_system, smooth_system, zero_potential_system

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "NBODYSCATTER_OUTPUT_DIR"
HASH_EXCLUDED = {"threads", "output"}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# Potential Config
#
# kind selects a preset:
#   zero            no interaction
#   homogeneous     I_ij / |q|^alpha with a uniform coupling or a full matrix
#   newtonian       I_ij = -G m_i m_j, alpha = 1
#   gaussian_bump   nonsingular short range, declared decay exponent alpha
#   softened_power  coupling / (|q|^2 + softening^2)^(alpha / 2)

class PotentialConfig(_Strict):
    kind: Literal["zero", "homogeneous", "newtonian", "gaussian_bump", "softened_power"] = "newtonian"
    alpha: Optional[PositiveFloat] = None
    coupling: float = -1.0
    coefficients: Optional[list[list[float]]] = None
    G: PositiveFloat = 1.0
    amplitude: float = 1.0
    width: PositiveFloat = 1.0
    softening: PositiveFloat = 1.0

    @model_validator(mode="after")
    def _alpha_required(self):
        if self.kind in ("homogeneous", "gaussian_bump", "softened_power") and self.alpha is None:
            raise ValueError(f"alpha is required for kind={self.kind!r}")
        return self


class SystemConfig(_Strict):
    n: int = Field(ge=2)
    d: PositiveInt
    masses: list[PositiveFloat]
    potential: PotentialConfig = PotentialConfig()

    @model_validator(mode="after")
    def _mass_count(self):
        if len(self.masses) != self.n:
            raise ValueError(f"masses: expected {self.n} entries, got {len(self.masses)}")
        return self

    def build_spec(self):
        """The SystemSpec described by this table."""
        pot = self.potential
        if pot.kind == "zero":
            return zero_potential_system(self.n, self.d, self.masses)
        if pot.kind == "newtonian":
            return newtonian_system(self.masses, self.d, pot.G)
        if pot.kind == "homogeneous":
            coupling = pot.coupling if pot.coefficients is None else np.asarray(pot.coefficients, dtype=float)
            return homogeneous_system(self.masses, self.d, pot.alpha, coupling)
        if pot.kind == "gaussian_bump":
            profile = GaussianBump(amplitude=pot.amplitude, width=pot.width)
        else:
            profile = SoftenedPower(coupling=pot.coupling, alpha=pot.alpha, softening=pot.softening)
        return smooth_system(self.masses, self.d, profile, pot.alpha)


class IntegratorSettings(_Strict):
    rel_tol: PositiveFloat = 1e-10
    abs_tol: PositiveFloat = 1e-12
    max_step: PositiveFloat = float("inf")
    collision_radius: Optional[PositiveFloat] = None
    method: Literal["DOP853", "yoshida6"] = "DOP853"
    step: PositiveFloat = 0.01

    def to_config(self):
        return IntegratorConfig(**self.model_dump())


class StateConfig(_Strict):
    p: list[float]
    q: list[float]

    def to_state(self):
        return PhaseState(p=self.p, q=self.q)


class RunConfig(_Strict):
    horizon: PositiveFloat = 2.0 ** 17
    t_first: PositiveFloat = 1.0
    tolerance: PositiveFloat = 1e-8
    t_end: PositiveFloat = 100.0
    samples: int = Field(default=101, ge=2)


class SamplerConfig(_Strict):
    count: NonNegativeInt = 0
    velocity_shell: tuple[PositiveFloat, PositiveFloat] = (0.5, 1.5)
    perturbation: PositiveFloat = 1e-3


class ScatterConfig(_Strict):
    comparison: Optional[Literal["Free", "Dollard"]] = None
    incoming: list[StateConfig] = []


class SweepConfig(_Strict):
    impact_parameters: list[PositiveFloat] = [1.0, 2.0, 5.0, 10.0]
    speed: PositiveFloat = 1.5
    lead_time: PositiveFloat = 50.0


class VerifyConfig(_Strict):
    checks: list[str] = []
    quick: bool = False


class OutputConfig(_Strict):
    directory: str = "results"
    format: Literal["csv", "json", "both"] = "both"


class ExperimentConfig(_Strict):
    scenario: Literal["simulate", "classify", "scatter", "verify", "sweep"]
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    threads: PositiveInt = 1
    system: Optional[SystemConfig] = None
    integrator: IntegratorSettings = IntegratorSettings()
    run: RunConfig = RunConfig()
    states: list[StateConfig] = []
    sampler: SamplerConfig = SamplerConfig()
    scatter: ScatterConfig = ScatterConfig()
    sweep: SweepConfig = SweepConfig()
    verify: VerifyConfig = VerifyConfig()
    output: OutputConfig = OutputConfig()

    @model_validator(mode="after")
    def _system_required(self):
        if self.scenario != "verify" and self.system is None:
            raise ValueError(f"a [system] table is required for scenario {self.scenario!r}")
        return self


def _format_validation_error(exc):
    lines = []
    for err in exc.errors():
        path = ".".join(str(part) for part in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "; ".join(lines)


def parse_config(data):
    """Validate a plain mapping into ExperimentConfig, naming the failing field."""
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(_format_validation_error(exc)) from exc


def load_config(path):
    """
    Read and validate a TOML experiment file.

    Raises:
        ConfigurationError: unreadable file, TOML syntax error (with line) or schema violation
    """
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read config: {exc.strerror}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    config = parse_config(data)
    logger.info(f"Loaded {config.scenario} config from {path}")
    return config


def apply_overrides(config, scenario=None, seed=None, horizon=None, out=None, threads=None):
    """Return a copy with environment and CLI overrides applied; CLI wins over the environment."""
    data = config.model_dump()
    env_out = os.environ.get(OUTPUT_DIR_ENV)
    if env_out:
        data["output"]["directory"] = env_out
    if out is not None:
        data["output"]["directory"] = str(out)
    if scenario is not None:
        data["scenario"] = scenario
    if seed is not None:
        data["seed"] = seed
    if horizon is not None:
        data["run"]["horizon"] = horizon
    if threads is not None:
        data["threads"] = threads
    return parse_config(data)


def config_hash(config):
    """SHA-256 of the canonical JSON dump, ignoring settings that do not change results."""
    payload = config.model_dump(mode="json", exclude=HASH_EXCLUDED)
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
