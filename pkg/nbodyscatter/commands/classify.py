import logging
from pathlib import Path

import click

from ..config import config_hash
from ..errors import CollisionError
from ..services.flows import nbody_flow
from ..services.free_region import default_params, entry_time, membership
from ..services.scattering import asymptotic_velocity
from ..utils.results import build_record, write_record, write_rows
from . import experiment_options, guarded, initial_states, map_items, run_scenario, wants_csv, wants_json

logger = logging.getLogger(__name__)

TABLE_HEADER = ["key", "status", "entry_time", "margin1", "margin2", "margin3", "tail_bound", "residual",
                "rate_estimate"]


def classify_state(config, params, index, state):
    """
    Classify one state by its entry into F+_loc.

    An orbit entering by the horizon is escaping: its asymptotic momentum
    is reported with the tail bound. Otherwise the item says so.
    """
    spec = config.system.build_spec()
    cfg = config.integrator.to_config()
    horizon = config.run.horizon
    try:
        entry = entry_time(spec, params, state, cfg, horizon)
    except CollisionError as exc:
        logger.warning(f"State {index}: collision while scanning for entry: {exc}")
        return {"status": "collision", "entry_time": None}
    if entry is None:
        return {"status": "no_entry", "entry_time": None, "horizon": horizon}

    at_entry = state if entry == 0.0 else nbody_flow(spec, state, (0.0, entry), cfg).final_state
    margins = membership(spec, params, at_entry).margins
    try:
        datum = asymptotic_velocity(spec, state, cfg, horizon, params, config.run.tolerance, config.run.t_first)
    except CollisionError as exc:
        logger.warning(f"State {index}: collision after entering the free region: {exc}")
        return {"status": "collision", "entry_time": entry, "margins": margins}
    return {
        "status": "escaping",
        "entry_time": entry,
        "margins": margins,
        "p_plus": datum.p_plus,
        "tail_bound": datum.tail_bound,
        "residual": datum.residual,
        "tolerance": config.run.tolerance,
        "converged": datum.converged,
        "rate_estimate": datum.rate_estimate,
    }


def _table_rows(record):
    for item in record.items:
        margins = item.get("margins") or [None, None, None]
        yield [item["key"], item["status"], item.get("entry_time"), *margins, item.get("tail_bound"),
               item.get("residual"), item.get("rate_estimate")]


def run_classify(config, progress=True):
    """
    Entry time, margins at entry and asymptotic momentum per state.

    Returns:
        ResultRecord
    """
    spec = config.system.build_spec()
    params = default_params(spec)
    states = initial_states(config, spec, params)
    results = map_items(classify_state, config, states, progress, desc="classify", context=params)
    record = build_record(config_hash(config), "classify", config.seed, results)
    escaping = sum(item["status"] == "escaping" for item in record.items)
    logger.info(f"{escaping} of {len(record.items)} states enter the finally free region by t={config.run.horizon}")
    if wants_json(config):
        write_record(record, config.output.directory)
    if wants_csv(config):
        write_rows(Path(config.output.directory) / "classify.csv", TABLE_HEADER, _table_rows(record))
    return record


@click.command("classify")
@experiment_options
@guarded
def classify_command(**options):
    """Report entry into the finally free region and asymptotic momenta."""
    _, record = run_scenario("classify", run_classify, **options)
    escaping = sum(item["status"] == "escaping" for item in record.items)
    click.echo(f"classify: {escaping}/{len(record.items)} escaping")
