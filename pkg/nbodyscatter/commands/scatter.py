import logging
from pathlib import Path

import click

from ..config import config_hash
from ..errors import ConfigurationError
from ..models import Comparison
from ..services.scattering import scattering_map
from ..utils.results import build_record, write_record, write_rows
from . import experiment_options, guarded, map_items, run_scenario, wants_csv, wants_json

logger = logging.getLogger(__name__)


def scatter_incoming(config, comparison, index, incoming):
    spec = config.system.build_spec()
    cfg = config.integrator.to_config()
    run = config.run
    result = scattering_map(spec, incoming, cfg, run.tolerance, run.horizon, run.t_first, comparison)
    converged = result.incoming_residual < run.tolerance and result.outgoing_residual < run.tolerance
    return {
        "p_minus": incoming.p,
        "q_minus": incoming.q,
        "state0_p": result.state0.p,
        "state0_q": result.state0.q,
        "p_plus": result.p_plus,
        "q_plus": result.q_plus,
        "incoming_residual": result.incoming_residual,
        "outgoing_residual": result.outgoing_residual,
        "tolerance": run.tolerance,
        "converged": converged,
        "deflection_angle": result.deflection_angle,
    }


def run_scatter(config, progress=True):
    """
    Scattering map S(p-, Q-) = (p+, Q+) for every configured incoming datum.

    Returns:
        ResultRecord
    """
    spec = config.system.build_spec()
    incoming = [state.to_state() for state in config.scatter.incoming]
    if not incoming:
        raise ConfigurationError("scatter.incoming: at least one incoming datum is required")
    for state in incoming:
        state.check_dimension(spec)
    comparison = None if config.scatter.comparison is None else Comparison(config.scatter.comparison)
    results = map_items(scatter_incoming, config, incoming, progress, desc="scatter", context=comparison)
    record = build_record(config_hash(config), "scatter", config.seed, results)
    if wants_json(config):
        write_record(record, config.output.directory)
    if wants_csv(config):
        rows = ([item["key"], item["deflection_angle"], item["incoming_residual"], item["outgoing_residual"],
                 item["converged"]] for item in record.items)
        write_rows(Path(config.output.directory) / "scatter.csv",
                   ["key", "deflection_angle", "incoming_residual", "outgoing_residual", "converged"], rows)
    return record


@click.command("scatter")
@experiment_options
@guarded
def scatter_command(**options):
    """Map incoming asymptotic data to outgoing data."""
    _, record = run_scenario("scatter", run_scatter, **options)
    converged = sum(bool(item["converged"]) for item in record.items)
    click.echo(f"scatter: {converged}/{len(record.items)} converged")
