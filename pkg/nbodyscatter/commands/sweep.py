import logging
from pathlib import Path

import click

from ..config import config_hash
from ..errors import ConfigurationError
from ..services.oracles import kepler_hyperbolic_state
from ..services.scattering import scattering_map, two_body_incoming
from ..utils.results import build_record, write_record, write_rows
from . import experiment_options, guarded, map_items, run_scenario, wants_csv, wants_json

logger = logging.getLogger(__name__)

SWEEP_HEADER = ["impact_parameter", "deflection_angle", "kepler_angle", "angle_error", "incoming_residual",
                "outgoing_residual"]


def kepler_coupling(spec):
    """I_12 when the pair interacts through a Coulomb/Newton potential, else None."""
    potential = spec.potential
    if not potential.is_homogeneous or potential.alpha != 1.0 or potential.is_zero:
        return None
    return float(potential.kind.coefficients[0, 1])


def sweep_impact(config, coupling, index, impact_parameter):
    """Scatter one two-body encounter and compare with the Kepler hyperbola when there is one."""
    spec = config.system.build_spec()
    cfg = config.integrator.to_config()
    run, sweep = config.run, config.sweep
    incoming = two_body_incoming(spec, sweep.speed, impact_parameter, sweep.lead_time)
    result = scattering_map(spec, incoming, cfg, run.tolerance, run.horizon, run.t_first)

    kepler_angle = None
    if coupling is not None:
        m1, m2 = spec.masses
        mu = m1 * m2 / (m1 + m2)
        _, hyperbola = kepler_hyperbolic_state((m1, m2), coupling, 0.5 * mu * sweep.speed ** 2,
                                               impact_parameter=impact_parameter, d=spec.d)
        kepler_angle = hyperbola.deflection_angle
    return {
        "impact_parameter": impact_parameter,
        "deflection_angle": result.deflection_angle,
        "kepler_angle": kepler_angle,
        "angle_error": None if kepler_angle is None else abs(result.deflection_angle - kepler_angle),
        "incoming_residual": result.incoming_residual,
        "outgoing_residual": result.outgoing_residual,
        "tolerance": run.tolerance,
    }


def run_sweep(config, progress=True):
    """
    Deflection angle against impact parameter for a two-body system.

    Returns:
        ResultRecord
    """
    spec = config.system.build_spec()
    if spec.n != 2 or spec.d < 2:
        raise ConfigurationError(f"system: sweep needs n = 2 and d >= 2, got n={spec.n}, d={spec.d}")
    coupling = kepler_coupling(spec)
    if coupling is None:
        logger.info("No Kepler oracle for this potential; kepler_angle is left empty")
    results = map_items(sweep_impact, config, config.sweep.impact_parameters, progress, desc="sweep",
                        context=coupling)
    record = build_record(config_hash(config), "sweep", config.seed, results)
    if wants_json(config):
        write_record(record, config.output.directory)
    if wants_csv(config):
        rows = ([item[column] for column in SWEEP_HEADER] for item in record.items)
        write_rows(Path(config.output.directory) / "sweep.csv", SWEEP_HEADER, rows)
    return record


@click.command("sweep")
@experiment_options
@guarded
def sweep_command(**options):
    """Two-body deflection angles over a list of impact parameters."""
    _, record = run_scenario("sweep", run_sweep, **options)
    click.echo(f"sweep: {len(record.items)} impact parameters")
